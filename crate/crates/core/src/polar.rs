//! Polar coordinates x = τ_E(x)^E ℓ_E(x) with respect to a scaling matrix.
//!
//! The norm is ‖x‖_E = ∫₀¹ ‖t^E x‖ dt/t = ∫_{−∞}^0 ‖e^{uE}x‖ du, evaluated by
//! composite Gauss–Legendre in u. Because every node contributes a
//! positive multiple of the Euclidean norm of an invertible image of x, the
//! discrete version is itself a norm.
//!
//! With N(s) = ‖e^{−sE}x‖_E the radial part is τ_E(x) = e^{s*} where
//! N(s*) = 1. N is strictly decreasing and N'(s) = −‖e^{−sE}x‖, so a
//! safeguarded Newton iteration on log N converges in a handful of steps.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{precondition, Error, Result};
use crate::linalg::{dot, norm2, Matrix};
use crate::operator_algebra::{BlockStructure, OperatorMatrix};
use crate::quadrature::GaussLegendre;
use crate::rng::{stream, stream_rng};

const NODES_PER_PANEL: usize = 10;
const TAIL_NORM: f64 = 1e-14;
const TAU_TOL: f64 = 1e-13;
const TAU_MAX_ITER: usize = 200;
const MAX_PROPOSALS: usize = 1_000_000;
const MIN_ACCEPTANCE: f64 = 1e-4;

/// Monte Carlo estimate of the total mass σ_E(S_E).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MassEstimate {
    pub mass: f64,
    pub stderr: f64,
    pub proposals: usize,
    pub acceptance: f64,
}

/// Calibration settings for the Monte Carlo parts of a [`PolarSystem`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    /// Shell proposals for the Monte Carlo mass estimate (d ≥ 3).
    pub mass_samples: usize,
    /// Points of the sphere rule; angular nodes for d = 2, exact draws for
    /// d ≥ 3 (0 disables the rule for d ≥ 3).
    pub design_size: usize,
    pub seed: u64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration { mass_samples: 200_000, design_size: 512, seed: 0 }
    }
}

/// A quadrature rule for σ_E: points θ_i ∈ S_E with weights w_i so that
/// ∫ g dσ_E ≈ Σ w_i g(θ_i).
///
/// For d = 1 the measure is two atoms and the rule is exact. For d = 2 the
/// sphere is parametrised by the angle β of u_β = (cos β, sin β) through
/// θ(β) = u_β/‖u_β‖_E, and σ_E(dθ) = |det[Eθ, θ'(β)]| dβ, so the periodic
/// trapezoidal rule in β is used. For d ≥ 3 the points are exact draws from
/// σ_E/σ_E(S_E) with equal weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereDesign {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    /// Angular nodes (d = 2 only).
    angles: Vec<f64>,
}

impl SphereDesign {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Angular nodes β_i of a d = 2 rule (empty otherwise).
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn integrate(&self, mut g: impl FnMut(&[f64]) -> f64) -> f64 {
        self.points().zip(&self.weights).map(|(t, w)| w * g(t)).sum()
    }

    /// Fallible variant of [`SphereDesign::integrate`].
    pub fn try_integrate(&self, mut g: impl FnMut(&[f64]) -> Result<f64>) -> Result<f64> {
        let mut s = 0.0;
        for (t, w) in self.points().zip(&self.weights) {
            s += w * g(t)?;
        }
        Ok(s)
    }
}

/// Exact sampler for Θ ~ σ_E/σ_E(S_E).
///
/// For d = 2 the angle β is drawn from the piecewise-linear interpolant of
/// the angular density on a fine periodic grid and mapped to
/// u_β/‖u_β‖_E; the interpolation error of the density is O(K⁻²). For
/// d = 1 the two atoms have equal mass. For d ≥ 3 shell rejection is used.
#[derive(Clone, Debug)]
pub struct DirectionSampler {
    dim: usize,
    /// Density on the angular grid (d = 2), periodic, `dens[K] = dens[0]`.
    dens: Vec<f64>,
    cdf: Vec<f64>,
    atoms: Vec<f64>,
}

impl DirectionSampler {
    pub fn sample<R: Rng + ?Sized>(&self, sys: &PolarSystem, rng: &mut R) -> Result<Vec<f64>> {
        match self.dim {
            1 => Ok(vec![if rng.random::<bool>() { self.atoms[0] } else { -self.atoms[0] }]),
            2 => {
                let k = self.dens.len() - 1;
                let h = 2.0 * PI / k as f64;
                let target = rng.random::<f64>() * self.cdf[k];
                let i = match self.cdf.binary_search_by(|c| c.partial_cmp(&target).unwrap()) {
                    Ok(i) => i.min(k - 1),
                    Err(i) => i.saturating_sub(1).min(k - 1),
                };
                // invert ∫₀^t (f0 + (f1 − f0)s/h) ds = rem on [0, h]
                let (f0, f1) = (self.dens[i], self.dens[i + 1]);
                let rem = target - self.cdf[i];
                let slope = (f1 - f0) / h;
                let t = if slope.abs() < 1e-14 * f0.max(1e-300) {
                    rem / f0
                } else {
                    let disc = (f0 * f0 + 2.0 * slope * rem).max(0.0);
                    2.0 * rem / (f0 + disc.sqrt())
                };
                let beta = i as f64 * h + t.clamp(0.0, h);
                let u = [beta.cos(), beta.sin()];
                let n = sys.norm_e(&u);
                Ok(vec![u[0] / n, u[1] / n])
            }
            _ => sys.sample_direction(rng),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PolarSystem {
    op: OperatorMatrix,
    dim: usize,
    e: Matrix,
    horizon: f64,
    weights: Vec<f64>,
    node_mats: Vec<Matrix>,
    m_e: f64,
    big_m_e: f64,
    bounding_radius: f64,
    half_power: Matrix,
    mass: Option<MassEstimate>,
    design: Option<SphereDesign>,
    k_e: Option<f64>,
}

impl PolarSystem {
    /// Builds the deterministic parts: norm quadrature, m_E/M_E estimates
    /// and the shell bounding radius.
    pub fn new(op: &OperatorMatrix) -> Result<Self> {
        let dim = op.dim();
        let e = op.entries().clone();
        let a1 = op.a_min();
        if !(a1 > 0.0) {
            return Err(Error::SpectrumTooSmall { min_real_part: a1 });
        }
        // Horizon U: smallest U with ‖e^{−UE}‖₂ below TAIL_NORM.
        let mut horizon = (-TAIL_NORM.ln() / a1).ceil().max(1.0);
        while op.exp_scaled(-horizon)?.spectral_norm() > TAIL_NORM {
            horizon += 1.0;
            if horizon > 1e5 {
                return Err(Error::NoConvergence { what: "norm horizon", iterations: 100_000 });
            }
        }
        let rho = e.spectral_norm();
        let width = (3.0 / rho).min(1.0);
        let panels = (horizon / width).ceil() as usize;
        let width = horizon / panels as f64;
        let gl = GaussLegendre::new(NODES_PER_PANEL);
        let mut weights = Vec::with_capacity(panels * NODES_PER_PANEL);
        let mut node_mats = Vec::with_capacity(panels * NODES_PER_PANEL);
        for k in 0..panels {
            let lo = -horizon + k as f64 * width;
            for (u, w) in gl.mapped(lo, lo + width) {
                weights.push(w);
                node_mats.push(op.exp_scaled(u)?);
            }
        }
        let half_power = op.exp_scaled(-core::f64::consts::LN_2)?;
        let mut sys = PolarSystem {
            op: op.clone(),
            dim,
            e,
            horizon,
            weights,
            node_mats,
            m_e: 0.0,
            big_m_e: 0.0,
            bounding_radius: 0.0,
            half_power,
            mass: None,
            design: None,
            k_e: None,
        };
        sys.estimate_sphere_extent()?;
        Ok(sys)
    }

    /// Builds the system and runs the Monte Carlo calibration.
    pub fn calibrated(op: &OperatorMatrix, cal: &Calibration) -> Result<Self> {
        let mut sys = Self::new(op)?;
        sys.calibrate(cal)?;
        Ok(sys)
    }

    /// Fixes the sphere mass and the sphere rule. For d ≤ 2 both come from
    /// the deterministic angular rule (the mass standard error is the change
    /// against a rule of half the size); for d ≥ 3 from shell Monte Carlo.
    pub fn calibrate(&mut self, cal: &Calibration) -> Result<()> {
        if self.dim <= 2 {
            let k = cal.design_size.max(16);
            let design = self.angular_design(k)?;
            let coarse = self.angular_design(k / 2)?;
            let mass = design.mass();
            self.mass = Some(MassEstimate {
                mass,
                stderr: (mass - coarse.mass()).abs(),
                proposals: 0,
                acceptance: 1.0,
            });
            self.design = Some(design);
            return Ok(());
        }
        let mut rng = stream_rng(cal.seed, stream::POLAR_CALIBRATION, 0);
        self.mass = Some(self.sphere_measure_estimate(cal.mass_samples, &mut rng)?);
        if cal.design_size > 0 {
            let mut rng = stream_rng(cal.seed, stream::SPHERE_DESIGN, 0);
            self.design = Some(self.sampled_design(cal.design_size, &mut rng)?);
        }
        Ok(())
    }

    /// Deterministic rule for d ≤ 2 with `k` angular nodes (ignored for d = 1).
    pub fn angular_design(&self, k: usize) -> Result<SphereDesign> {
        match self.dim {
            1 => {
                let theta = 1.0 / self.norm_e(&[1.0]);
                let w = (self.e[(0, 0)] * theta).abs();
                Ok(SphereDesign { dim: 1, points: vec![theta, -theta], weights: vec![w, w], angles: Vec::new() })
            }
            2 => {
                let k = k.max(4);
                let h = 2.0 * PI / k as f64;
                let mut points = Vec::with_capacity(2 * k);
                let mut weights = Vec::with_capacity(k);
                let mut angles = Vec::with_capacity(k);
                for i in 0..k {
                    let beta = i as f64 * h;
                    let (theta, dens) = self.angular_point(beta);
                    points.extend_from_slice(&theta);
                    weights.push(h * dens);
                    angles.push(beta);
                }
                Ok(SphereDesign { dim: 2, points, weights, angles })
            }
            _ => Err(precondition("angular sphere rules exist only for d ≤ 2")),
        }
    }

    /// θ(β) and the angular density |det[Eθ, θ'(β)]| (d = 2).
    fn angular_point(&self, beta: f64) -> (Vec<f64>, f64) {
        let u = [beta.cos(), beta.sin()];
        let du = [-beta.sin(), beta.cos()];
        let n = self.norm_e(&u);
        let g = self.norm_gradient(&u);
        let dn = g[0] * du[0] + g[1] * du[1];
        let theta = [u[0] / n, u[1] / n];
        let dtheta = [du[0] / n - u[0] * dn / (n * n), du[1] / n - u[1] * dn / (n * n)];
        let et = self.e.mul_vec(&theta);
        let det = et[0] * dtheta[1] - et[1] * dtheta[0];
        (theta.to_vec(), det.abs())
    }

    /// Sampler for Θ ~ σ_E/σ_E(S_E); `k` is the angular grid size for d = 2.
    pub fn direction_sampler(&self, k: usize) -> DirectionSampler {
        match self.dim {
            1 => DirectionSampler { dim: 1, dens: Vec::new(), cdf: Vec::new(), atoms: vec![1.0 / self.norm_e(&[1.0])] },
            2 => {
                let k = k.max(16);
                let h = 2.0 * PI / k as f64;
                let mut dens: Vec<f64> = (0..k).map(|i| self.angular_point(i as f64 * h).1).collect();
                dens.push(dens[0]);
                let mut cdf = vec![0.0; k + 1];
                for i in 0..k {
                    cdf[i + 1] = cdf[i] + 0.5 * h * (dens[i] + dens[i + 1]);
                }
                DirectionSampler { dim: 2, dens, cdf, atoms: Vec::new() }
            }
            d => DirectionSampler { dim: d, dens: Vec::new(), cdf: Vec::new(), atoms: Vec::new() },
        }
    }

    fn estimate_sphere_extent(&mut self) -> Result<()> {
        let d = self.dim;
        let mut dirs: Vec<Vec<f64>> = Vec::new();
        match d {
            1 => {
                dirs.push(vec![1.0]);
                dirs.push(vec![-1.0]);
            }
            2 => {
                let n = 2048;
                for k in 0..n {
                    let a = 2.0 * PI * k as f64 / n as f64;
                    dirs.push(vec![a.cos(), a.sin()]);
                }
            }
            _ => {
                let mut rng = stream_rng(0, stream::POLAR_CALIBRATION, u64::MAX);
                for i in 0..d {
                    let mut v = vec![0.0; d];
                    v[i] = 1.0;
                    dirs.push(v.clone());
                    v[i] = -1.0;
                    dirs.push(v);
                }
                for _ in 0..8192 {
                    dirs.push(gaussian_unit(d, &mut rng));
                }
            }
        }
        let (mut lo, mut hi, mut reach) = (f64::INFINITY, 0.0f64, 0.0f64);
        let radii = [0.25, 0.5, 1.0, 1.5, 2.0];
        let powers: Vec<Matrix> = radii.iter().map(|&r| self.op.power(r)).collect::<Result<_>>()?;
        for u in &dirs {
            let n = self.norm_e(u);
            let theta: Vec<f64> = u.iter().map(|v| v / n).collect();
            let len = norm2(&theta);
            lo = lo.min(len);
            hi = hi.max(len);
            for p in &powers {
                reach = reach.max(norm2(&p.mul_vec(&theta)));
            }
        }
        self.m_e = lo;
        self.big_m_e = hi;
        self.bounding_radius = 1.5 * reach;
        Ok(())
    }

    pub fn operator(&self) -> &OperatorMatrix {
        &self.op
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of quadrature nodes in the norm rule.
    pub fn quadrature_size(&self) -> usize {
        self.weights.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Estimated min_{S_E} ‖θ‖.
    pub fn m_e(&self) -> f64 {
        self.m_e
    }

    /// Estimated max_{S_E} ‖θ‖.
    pub fn big_m_e(&self) -> f64 {
        self.big_m_e
    }

    pub fn shell_bounding_radius(&self) -> f64 {
        self.bounding_radius
    }

    pub fn sphere_mass(&self) -> Option<MassEstimate> {
        self.mass
    }

    pub fn design(&self) -> Option<&SphereDesign> {
        self.design.as_ref()
    }

    pub fn quasi_triangle_constant(&self) -> Option<f64> {
        self.k_e
    }

    /// ‖x‖_E.
    pub fn norm_e(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let mut y = [0.0f64; 8];
        if self.dim <= 8 {
            let y = &mut y[..self.dim];
            let mut s = 0.0;
            for (m, &w) in self.node_mats.iter().zip(&self.weights) {
                m.mul_vec_into(x, y);
                s += w * norm2(y);
            }
            s
        } else {
            self.node_mats.iter().zip(&self.weights).map(|(m, &w)| w * norm2(&m.mul_vec(x))).sum()
        }
    }

    /// Gradient of the (discretised) norm at x ≠ 0.
    pub fn norm_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        let mut y = vec![0.0; self.dim];
        for (m, &w) in self.node_mats.iter().zip(&self.weights) {
            m.mul_vec_into(x, &mut y);
            let r = norm2(&y);
            if r > 0.0 {
                for (i, gi) in g.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for (k, yk) in y.iter().enumerate() {
                        s += m[(k, i)] * yk;
                    }
                    *gi += w * s / r;
                }
            }
        }
        g
    }

    /// N(s) = ‖e^{−sE}x‖_E together with dN/ds, given z = e^{−sE}x.
    fn norm_and_slope(&self, z: &[f64]) -> (f64, f64) {
        let ez = self.e.mul_vec(z);
        let mut y = vec![0.0; self.dim];
        let mut ey = vec![0.0; self.dim];
        let (mut n, mut dn) = (0.0, 0.0);
        for (m, &w) in self.node_mats.iter().zip(&self.weights) {
            m.mul_vec_into(z, &mut y);
            m.mul_vec_into(&ez, &mut ey);
            let r = norm2(&y);
            if r > 0.0 {
                n += w * r;
                dn -= w * dot(&y, &ey) / r;
            }
        }
        (n, dn)
    }

    /// r^E x.
    pub fn power_apply(&self, r: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.op.power(r)?.mul_vec(x))
    }

    /// (τ_E(x), ℓ_E(x)); (0, 0) for x = 0.
    pub fn tau_ell(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.tau_ell_bracketed(x, None)
    }

    pub fn tau(&self, x: &[f64]) -> Result<f64> {
        Ok(self.tau_ell(x)?.0)
    }

    pub fn ell(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.tau_ell(x)?.1)
    }

    fn tau_ell_bracketed(&self, x: &[f64], bracket: Option<(f64, f64)>) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Range("point has non-finite coordinates".into()));
        }
        if x.iter().all(|&v| v == 0.0) {
            return Ok((0.0, vec![0.0; self.dim]));
        }
        let n0 = self.norm_e(x);
        let (mut lo, mut hi) = bracket.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        let abar = self.op.trace() / self.dim as f64;
        let mut s = match bracket {
            Some((a, b)) => 0.5 * (a + b),
            None => n0.ln() / abar,
        };
        for _ in 0..TAU_MAX_ITER {
            let z = self.op.exp_scaled(-s)?.mul_vec(x);
            let (n, dn) = self.norm_and_slope(&z);
            let f = n.ln();
            if f.abs() < 1e-15 {
                return Ok((s.exp(), z));
            }
            if f > 0.0 {
                lo = lo.max(s);
            } else {
                hi = hi.min(s);
            }
            let slope = dn / n;
            let mut next = s - f / slope;
            if !next.is_finite() || next <= lo || next >= hi {
                next = match (lo.is_finite(), hi.is_finite()) {
                    (true, true) => 0.5 * (lo + hi),
                    (true, false) => lo + 1.0 + lo.abs(),
                    (false, true) => hi - 1.0 - hi.abs(),
                    _ => s - f.signum(),
                };
            }
            if (next - s).abs() < TAU_TOL || (hi - lo) < TAU_TOL {
                let s_final = next.clamp(lo.min(hi), hi.max(lo));
                let z = self.op.exp_scaled(-s_final)?.mul_vec(x);
                return Ok((s_final.exp(), z));
            }
            s = next;
        }
        Err(Error::NoConvergence { what: "radial part", iterations: TAU_MAX_ITER })
    }

    /// True iff 1 ≤ τ_E(x) ≤ 2, decided from two norm evaluations.
    pub fn in_shell(&self, x: &[f64]) -> bool {
        if self.norm_e(x) < 1.0 {
            return false;
        }
        let y = self.half_power.mul_vec(x);
        self.norm_e(&y) <= 1.0
    }

    fn ball_volume(&self) -> f64 {
        let d = self.dim as f64;
        PI.powf(d / 2.0) / libm::tgamma(d / 2.0 + 1.0) * self.bounding_radius.powf(d)
    }

    fn shell_factor(&self) -> f64 {
        let q = self.op.trace();
        q / (2f64.powf(q) - 1.0)
    }

    fn uniform_in_ball<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut u = gaussian_unit(self.dim, rng);
        let r = self.bounding_radius * rng.random::<f64>().powf(1.0 / self.dim as f64);
        for v in &mut u {
            *v *= r;
        }
        u
    }

    /// σ_E(S_E) = q·Leb{1 ≤ τ_E ≤ 2}/(2^q − 1) by rejection in the bounding ball.
    pub fn sphere_measure_estimate<R: Rng + ?Sized>(&self, n_samples: usize, rng: &mut R) -> Result<MassEstimate> {
        let (sum, sum_sq, acc) = self.shell_average(n_samples, rng, |_| 1.0)?;
        let _ = sum_sq;
        let p = acc as f64 / n_samples as f64;
        let scale = self.shell_factor() * self.ball_volume();
        Ok(MassEstimate {
            mass: scale * sum / n_samples as f64,
            stderr: scale * (p * (1.0 - p) / n_samples as f64).sqrt(),
            proposals: n_samples,
            acceptance: p,
        })
    }

    /// ∫_{S_E} g dσ_E by fresh shell sampling; returns (value, stderr).
    pub fn integrate_on_sphere<R: Rng + ?Sized>(
        &self,
        g: impl FnMut(&[f64]) -> f64,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        let (sum, sum_sq, _) = self.shell_average(n_samples, rng, g)?;
        let n = n_samples as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        let scale = self.shell_factor() * self.ball_volume();
        Ok((scale * mean, scale * (var / n).sqrt()))
    }

    fn shell_average<R: Rng + ?Sized>(
        &self,
        n_samples: usize,
        rng: &mut R,
        mut g: impl FnMut(&[f64]) -> f64,
    ) -> Result<(f64, f64, usize)> {
        if n_samples < 2 {
            return Err(precondition("at least two shell proposals are needed"));
        }
        let (mut sum, mut sum_sq, mut acc) = (0.0, 0.0, 0usize);
        for _ in 0..n_samples {
            let x = self.uniform_in_ball(rng);
            if self.in_shell(&x) {
                let (_, theta) = self.tau_ell_bracketed(&x, Some((-1e-9, core::f64::consts::LN_2 + 1e-9)))?;
                let v = g(&theta);
                sum += v;
                sum_sq += v * v;
                acc += 1;
            }
        }
        let p = acc as f64 / n_samples as f64;
        if p < MIN_ACCEPTANCE {
            return Err(Error::BoundingRadius { acceptance: p });
        }
        Ok((sum, sum_sq, acc))
    }

    /// One uniform draw X from the shell {1 ≤ τ_E ≤ 2}.
    pub fn sample_shell_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        for _ in 0..MAX_PROPOSALS {
            let x = self.uniform_in_ball(rng);
            if self.in_shell(&x) {
                return Ok(x);
            }
        }
        Err(Error::RejectionExhausted { proposals: MAX_PROPOSALS })
    }

    /// Θ = ℓ_E(X) for X uniform on the shell; Θ has law σ_E/σ_E(S_E).
    pub fn sample_direction<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let x = self.sample_shell_point(rng)?;
        Ok(self.tau_ell_bracketed(&x, Some((-1e-9, core::f64::consts::LN_2 + 1e-9)))?.1)
    }

    fn sampled_design<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SphereDesign> {
        let mass = self.mass.ok_or_else(|| precondition("sphere mass must be calibrated first"))?.mass;
        let mut points = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            points.extend(self.sample_direction(rng)?);
        }
        Ok(SphereDesign { dim: self.dim, points, weights: vec![mass / n as f64; n], angles: Vec::new() })
    }

    /// Empirical quasi-triangle constant: 1.1 × max of
    /// τ(x+y)/(τ(x)+τ(y)) over random pairs spanning several scales.
    pub fn estimate_quasi_triangle<R: Rng + ?Sized>(&mut self, n_pairs: usize, rng: &mut R) -> Result<f64> {
        let mut worst = 0.0f64;
        for _ in 0..n_pairs {
            let x = self.random_point_multiscale(rng);
            let y = self.random_point_multiscale(rng);
            let s: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            let (tx, ty, ts) = (self.tau(&x)?, self.tau(&y)?, self.tau(&s)?);
            if tx + ty > 0.0 {
                worst = worst.max(ts / (tx + ty));
            }
        }
        let k = 1.1 * worst;
        self.k_e = Some(k);
        Ok(k)
    }

    fn random_point_multiscale<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut u = gaussian_unit(self.dim, rng);
        let r = 10f64.powf(rng.random_range(-3.0..3.0));
        for v in &mut u {
            *v *= r;
        }
        u
    }
}

pub(crate) fn gaussian_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm2(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Ratio windows for the local envelope
/// c₁‖x‖^{H_{j0}}|log‖x‖|^{−(p−1)H_{j0}} ≤ τ_E(x) ≤ c₂‖x‖^{H_j}|log‖x‖|^{(p−1)H_j}
/// on ⊕_{k=j0}^{j} W_k.
#[derive(Clone, Debug, PartialEq)]
pub struct TauBoundsReport {
    pub j0: usize,
    pub j: usize,
    pub p: usize,
    /// (‖x‖, τ_E(x), lower ratio, upper ratio) per test point.
    pub samples: Vec<(f64, f64, f64, f64)>,
    pub lower_min: f64,
    pub lower_max: f64,
    pub upper_min: f64,
    pub upper_max: f64,
}

impl TauBoundsReport {
    pub fn lower_window(&self) -> f64 {
        self.lower_max / self.lower_min
    }

    pub fn upper_window(&self) -> f64 {
        self.upper_max / self.upper_min
    }

    /// Both ratio windows (max/min) below `limit`.
    pub fn bounded(&self, limit: f64) -> bool {
        self.lower_min > 0.0 && self.upper_min > 0.0 && self.lower_window() < limit && self.upper_window() < limit
    }
}

/// Samples points of ⊕_{k=j0}^{j} W_k with log-uniform Euclidean norm in
/// [1e-8, r] and reports the two envelope ratios (blocks zero-based).
pub fn tau_bounds_check<R: Rng + ?Sized>(
    sys: &PolarSystem,
    blocks: &BlockStructure,
    j0: usize,
    j: usize,
    r: f64,
    n_points: usize,
    rng: &mut R,
) -> Result<TauBoundsReport> {
    if j0 > j || j >= blocks.blocks().len() {
        return Err(precondition(format!("block indices must satisfy j0 ≤ j < {}", blocks.blocks().len())));
    }
    if !(r > 1e-8 && r < 1.0) {
        return Err(precondition("r must lie in (1e-8, 1)"));
    }
    if blocks.dim() != sys.dim() {
        return Err(Error::Dimension { expected: sys.dim(), got: blocks.dim() });
    }
    let basis = blocks.direct_sum_basis(j0, j);
    let proj = blocks.projector(j0, j)?;
    let h0 = 1.0 / blocks.blocks()[j0].real_part();
    let hj = 1.0 / blocks.blocks()[j].real_part();
    let p = blocks.p_index(j0, j);
    let pm1 = (p - 1) as f64;
    let (llo, lhi) = (1e-8f64.ln(), r.ln());
    let mut samples = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let c = gaussian_unit(basis.cols(), rng);
        let mut x = basis.mul_vec(&c);
        let target = rng.random_range(llo..=lhi).exp();
        let nx = norm2(&x);
        for v in &mut x {
            *v *= target / nx;
        }
        let px = proj.mul_vec(&x);
        let resid = norm2(&x.iter().zip(&px).map(|(a, b)| a - b).collect::<Vec<_>>());
        if resid > 1e-10 * target {
            return Err(precondition(format!("test point leaves the subspace (residual {resid:e})")));
        }
        let nrm = norm2(&x);
        let lg = nrm.ln().abs();
        let tau = sys.tau(&x)?;
        let lower = tau / (nrm.powf(h0) * lg.powf(-pm1 * h0));
        let upper = tau / (nrm.powf(hj) * lg.powf(pm1 * hj));
        samples.push((nrm, tau, lower, upper));
    }
    let fold = |f: fn(&(f64, f64, f64, f64)) -> f64| {
        samples.iter().map(f).fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (lower_min, lower_max) = fold(|s| s.2);
    let (upper_min, upper_max) = fold(|s| s.3);
    Ok(TauBoundsReport { j0, j, p, samples, lower_min, lower_max, upper_min, upper_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator_algebra::JordanBlock;
    use crate::rng::stream_rng;

    fn diag(a: &[f64]) -> PolarSystem {
        PolarSystem::new(&OperatorMatrix::diagonal(a).unwrap()).unwrap()
    }

    #[test]
    fn norm_of_scaled_identity_has_closed_form() {
        let sys = diag(&[2.0, 2.0]);
        let x = [0.3, -0.4];
        assert!((sys.norm_e(&x) - 0.25).abs() < 1e-12);
        assert_eq!(sys.norm_e(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn norm_change_of_variable() {
        let sys = diag(&[2.0, 3.0]);
        let x = [0.7, -0.2];
        let y = sys.power_apply(2.0, &x).unwrap();
        // ‖2^E x‖_E = ∫_{−∞}^{ln 2} ‖e^{uE}x‖ du
        let gl = GaussLegendre::new(20);
        let extra = gl.integrate(0.0, core::f64::consts::LN_2, |u| {
            norm2(&sys.operator().exp_scaled(u).unwrap().mul_vec(&x))
        });
        assert!((sys.norm_e(&y) - sys.norm_e(&x) - extra).abs() < 1e-8);
    }

    #[test]
    fn tau_on_sphere_and_eigendirection() {
        let sys = diag(&[2.0, 3.0]);
        let (t, l) = sys.tau_ell(&[2.0, 0.0]).unwrap();
        assert!((t - 1.0).abs() < 1e-10 && (l[0] - 2.0).abs() < 1e-9);
        let c0 = sys.tau(&[0.0, 1.0]).unwrap();
        for k in 1..12 {
            let v = 2f64.powi(-k);
            let c = sys.tau(&[0.0, v]).unwrap() / v.powf(1.0 / 3.0);
            assert!((c / c0 - 1.0).abs() < 1e-8);
        }
        assert_eq!(sys.tau(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn tau_roundtrip_for_jordan_and_complex() {
        let mut rng = stream_rng(3, 99, 0);
        for bs in [
            BlockStructure::new(alloc::vec![JordanBlock::real(2.0, 2)], Matrix::identity(2)).unwrap(),
            BlockStructure::new(alloc::vec![JordanBlock::complex(1.5, 1.0, 1)], Matrix::identity(2)).unwrap(),
        ] {
            let op = OperatorMatrix::build_from_blocks(bs).unwrap();
            let sys = PolarSystem::new(&op).unwrap();
            for _ in 0..50 {
                let x: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
                let (t, l) = sys.tau_ell(&x).unwrap();
                assert!((sys.norm_e(&l) - 1.0).abs() < 1e-9);
                let back = sys.power_apply(t, &l).unwrap();
                assert!(norm2(&back.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>()) < 1e-9 * norm2(&x));
                let c = rng.random_range(0.1..10.0);
                let cx = sys.power_apply(c, &x).unwrap();
                assert!((sys.tau(&cx).unwrap() / (c * t) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identity_sphere_mass_is_two_pi() {
        let op = OperatorMatrix::with_positive_spectrum(Matrix::identity(2)).unwrap();
        let sys = PolarSystem::new(&op).unwrap();
        assert!((sys.m_e() - 1.0).abs() < 1e-9 && (sys.big_m_e() - 1.0).abs() < 1e-9);
        let mut rng = stream_rng(1, 1, 0);
        let est = sys.sphere_measure_estimate(100_000, &mut rng).unwrap();
        assert!((est.mass - 2.0 * PI).abs() < 4.0 * est.stderr, "{est:?}");
        let (v, se) = sys.integrate_on_sphere(|t| t[0] * t[0], 100_000, &mut rng).unwrap();
        assert!((v - PI).abs() < 4.0 * se + 0.02, "{v} ± {se}");
    }

    #[test]
    fn angular_rule_matches_closed_forms_and_monte_carlo() {
        let op = OperatorMatrix::with_positive_spectrum(Matrix::identity(2)).unwrap();
        let sys = PolarSystem::new(&op).unwrap();
        let d = sys.angular_design(256).unwrap();
        assert!((d.mass() - 2.0 * PI).abs() < 1e-9);
        assert!((d.integrate(|t| t[0] * t[0]) - PI).abs() < 1e-9);

        // d = 1: two atoms of mass a² each
        let sys1 = diag(&[2.0]);
        let d1 = sys1.angular_design(0).unwrap();
        assert!((d1.mass() - 8.0).abs() < 1e-9);

        let sys = diag(&[2.0, 3.0]);
        let rule = sys.angular_design(512).unwrap().mass();
        let mut rng = stream_rng(2, 99, 0);
        let mc = sys.sphere_measure_estimate(200_000, &mut rng).unwrap();
        assert!((rule - mc.mass).abs() < 4.0 * mc.stderr, "{rule} vs {mc:?}");
        assert!((rule - sys.angular_design(128).unwrap().mass()).abs() < 1e-6 * rule);
    }

    #[test]
    fn direction_sampler_reproduces_sphere_moments() {
        let op = OperatorMatrix::build_from_blocks(
            BlockStructure::new(alloc::vec![JordanBlock::real(2.0, 2)], Matrix::identity(2)).unwrap(),
        )
        .unwrap();
        let sys = PolarSystem::new(&op).unwrap();
        let rule = sys.angular_design(512).unwrap();
        let exact = rule.integrate(|t| t[0] * t[0]) / rule.mass();
        let sampler = sys.direction_sampler(2048);
        let mut rng = stream_rng(4, 99, 0);
        let n = 40_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let t = sampler.sample(&sys, &mut rng).unwrap();
            assert!((sys.norm_e(&t) - 1.0).abs() < 1e-12);
            s += t[0] * t[0];
            s2 += t[0].powi(4);
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact} ± {se}");
    }

    #[test]
    fn diagonal_envelope_along_first_axis() {
        let op = OperatorMatrix::diagonal(&[2.0, 3.0]).unwrap();
        let sys = PolarSystem::new(&op).unwrap();
        let mut rng = stream_rng(5, 99, 0);
        let rep = tau_bounds_check(&sys, op.blocks().unwrap(), 0, 0, 0.1, 200, &mut rng).unwrap();
        assert!(rep.lower_window() < 1.02);
        let rep = tau_bounds_check(&sys, op.blocks().unwrap(), 0, 1, 0.1, 300, &mut rng).unwrap();
        assert!(rep.bounded(50.0));
    }
}
