//! Spectral integrals I_α(θ) = ∫ |e^{i⟨θ,ξ⟩} − 1|^α ψ(ξ)^{−α−q} dξ.
//!
//! Writing ξ = r^{E^t}θ' with θ' ∈ S_{E^t} and using ψ(r^{E^t}θ') = rψ(θ'),
//! the integral factors as
//!
//!   I_α(θ) = ∫_{S_{E^t}} ψ(θ')^{−α−q} R_α(θ, θ') σ(dθ'),
//!   R_α(θ, θ') = ∫_ℝ |2 sin(φ(u)/2)|^α e^{−αu} du,  φ(u) = ⟨e^{uE}θ, θ'⟩.
//!
//! The radial integral is marched in u with Simpson steps whose length
//! keeps the phase increment below a fixed resolution. The lower tail,
//! where |φ| ≪ 1, decays like e^{α(a_1−1)u} and is closed analytically from
//! the local decay rate. Once |φ| and |φ_u| are large the factor P(φ) =
//! |2 sin(φ/2)|^α is replaced by its mean A = 2^{α+1}c_α, with the first
//! boundary correction −Q̃(φ(U))e^{−αU}/φ_u(U), Q̃ the zero-mean
//! antiderivative of P − A.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::homogeneous::HomogeneousFunction;
use crate::linalg::{dot, Matrix};
use crate::operator_algebra::OperatorMatrix;
use crate::polar::{PolarSystem, SphereDesign};
use crate::stable_core::{cos_moment, StableParams};

const LEVELS: usize = 18;
const Q_CELLS: usize = 4096;
const LOWER_TAIL: f64 = 1e-8;

/// Value of a radial or spherical integral with an error bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integral {
    pub value: f64,
    /// Bound on the neglected tail terms.
    pub uncertainty: f64,
}

impl Integral {
    /// True when the tail bound exceeds 1e-3 of the value.
    pub fn flagged(&self) -> bool {
        !(self.uncertainty <= 1e-3 * self.value.abs())
    }
}

/// Marching rule for R_α(θ, θ').
#[derive(Clone, Debug)]
pub struct RadialEngine {
    alpha: f64,
    dim: usize,
    u0: f64,
    start: Matrix,
    h_max: f64,
    half_steps: Vec<Matrix>,
    resolution: f64,
    phi_stop: f64,
    u_max: f64,
    mean: f64,
    qtab: Vec<f64>,
    qmax: f64,
}

impl RadialEngine {
    /// `extent` bounds ‖θ‖·‖θ'‖ over the directions that will be used.
    pub fn new(alpha: f64, e: &OperatorMatrix, extent: f64) -> Result<Self> {
        Self::with_resolution(alpha, e, extent, 0.25, 40.0)
    }

    /// `resolution`: phase increment per Simpson step (radians);
    /// `phi_stop`: |φ|, |φ_u| level where the mean-value tail takes over.
    pub fn with_resolution(alpha: f64, e: &OperatorMatrix, extent: f64, resolution: f64, phi_stop: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(invalid(format!("stability index must lie in (0, 2], got {alpha}")));
        }
        if e.a_min() <= 1.0 {
            return Err(Error::SpectrumTooSmall { min_real_part: e.a_min() });
        }
        let dim = e.dim();
        if dim > 8 {
            return Err(invalid("spectral integrals support d ≤ 8"));
        }
        // u0: (extent·‖e^{uE}‖)^α e^{−αu} ≤ LOWER_TAIL
        let mut u0 = -1.0;
        loop {
            let n = e.exp_scaled(u0)?.spectral_norm();
            if (extent * n * (-u0).exp()).powf(alpha) <= LOWER_TAIL {
                break;
            }
            u0 -= 1.0;
            if u0 < -5000.0 {
                return Err(Error::NoConvergence { what: "lower radial cut-off", iterations: 5000 });
            }
        }
        let h_max = 0.1;
        let half_steps = (0..=LEVELS)
            .map(|k| e.exp_scaled(0.5 * h_max / (1u64 << k) as f64))
            .collect::<Result<Vec<_>>>()?;
        let u_max = ((2f64.powf(alpha) / alpha) / 1e-16).ln() / alpha;
        let mean = 2f64.powf(alpha + 1.0) * cos_moment(alpha);
        // Q̃ on [0, 2π]
        let hq = 2.0 * PI / Q_CELLS as f64;
        let p = |s: f64| (2.0 * (0.5 * s).sin().abs()).powf(alpha) - mean;
        let mut q = vec![0.0; Q_CELLS + 1];
        for i in 0..Q_CELLS {
            let (a, b) = (i as f64 * hq, (i + 1) as f64 * hq);
            q[i + 1] = q[i] + hq / 6.0 * (p(a) + 4.0 * p(0.5 * (a + b)) + p(b));
        }
        let qmean = q[..Q_CELLS].iter().sum::<f64>() / Q_CELLS as f64;
        q.iter_mut().for_each(|v| *v -= qmean);
        let qmax = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(RadialEngine {
            alpha,
            dim,
            u0,
            start: e.exp_scaled(u0)?,
            h_max,
            half_steps,
            resolution,
            phi_stop,
            u_max,
            mean,
            qtab: q,
            qmax,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// e^{u0 E}θ, the starting vector of the march for direction θ.
    pub fn start_vector(&self, theta: &[f64]) -> Vec<f64> {
        self.start.mul_vec(theta)
    }

    fn profile(&self, phi: f64) -> f64 {
        let s = 2.0 * (0.5 * phi).sin().abs();
        if self.alpha == 2.0 {
            s * s
        } else {
            s.powf(self.alpha)
        }
    }

    fn qtilde(&self, phi: f64) -> f64 {
        let x = phi.rem_euclid(2.0 * PI) / (2.0 * PI) * Q_CELLS as f64;
        let i = (x.floor() as usize).min(Q_CELLS - 1);
        let f = x - i as f64;
        self.qtab[i] * (1.0 - f) + self.qtab[i + 1] * f
    }

    /// R_α(θ, θ') given v0 = e^{u0E}θ, θ', E^tθ' and (E^t)²θ'.
    pub fn radial(&self, v0: &[f64], tp: &[f64], etp: &[f64], e2tp: &[f64]) -> Integral {
        let d = self.dim;
        let a = self.alpha;
        let mut v = [0.0f64; 8];
        let mut vm = [0.0f64; 8];
        let mut v1 = [0.0f64; 8];
        v[..d].copy_from_slice(v0);
        let mut u = self.u0;
        let mut phi = dot(&v[..d], tp);
        let mut dphi = dot(&v[..d], etp);
        let mut f0 = self.profile(phi) * (-a * u).exp();
        let mut acc = 0.0;
        if phi != 0.0 {
            let kappa = a * (dphi / phi - 1.0);
            if kappa > 0.0 {
                acc += f0 / kappa;
            }
        }
        let uncertainty;
        loop {
            if phi.abs() >= self.phi_stop && dphi.abs() >= self.phi_stop {
                let decay = (-a * u).exp();
                let d2 = dot(&v[..d], e2tp);
                acc += self.mean * decay / a - self.qtilde(phi) * decay / dphi;
                uncertainty = self.qmax * (a + (d2 / dphi).abs()) * decay / (dphi * dphi);
                break;
            }
            let remaining = 2f64.powf(a) * (-a * u).exp() / a;
            if u >= self.u_max || remaining < 1e-13 * acc {
                uncertainty = remaining;
                break;
            }
            let target = self.resolution / dphi.abs().max(1e-300);
            let k = if target >= self.h_max {
                0
            } else {
                ((self.h_max / target).log2().ceil() as usize).min(LEVELS)
            };
            let h = self.h_max / (1u64 << k) as f64;
            let s = &self.half_steps[k];
            s.mul_vec_into(&v[..d], &mut vm[..d]);
            s.mul_vec_into(&vm[..d], &mut v1[..d]);
            let phim = dot(&vm[..d], tp);
            let phi1 = dot(&v1[..d], tp);
            let fm = self.profile(phim) * (-a * (u + 0.5 * h)).exp();
            let f1 = self.profile(phi1) * (-a * (u + h)).exp();
            acc += h / 6.0 * (f0 + 4.0 * fm + f1);
            v[..d].copy_from_slice(&v1[..d]);
            u += h;
            phi = phi1;
            dphi = dot(&v[..d], etp);
            f0 = f1;
        }
        Integral { value: acc, uncertainty }
    }
}

#[derive(Clone, Debug)]
struct Node {
    theta: Vec<f64>,
    e_theta: Vec<f64>,
    e2_theta: Vec<f64>,
    /// w_i ψ(θ'_i)^{−α−q}
    weight: f64,
}

/// I_α(θ) over a fixed sphere rule on S_{E^t}.
#[derive(Clone, Debug)]
pub struct SpectralIntegrator {
    engine: RadialEngine,
    nodes: Vec<Node>,
    q: f64,
}

impl SpectralIntegrator {
    /// `sys_e` is the polar system of E (x side), `sys_et` a calibrated
    /// system of E^t carrying the sphere rule, `psi` is E^t-homogeneous.
    pub fn new(alpha: f64, sys_e: &PolarSystem, sys_et: &PolarSystem, psi: &HomogeneousFunction) -> Result<Self> {
        let design = sys_et
            .design()
            .ok_or_else(|| crate::error::precondition("the E^t polar system needs a sphere rule"))?;
        Self::with_design(alpha, sys_e, design, psi)
    }

    pub fn with_design(alpha: f64, sys_e: &PolarSystem, design: &SphereDesign, psi: &HomogeneousFunction) -> Result<Self> {
        Self::build(alpha, sys_e, design, psi, None)
    }

    /// As [`SpectralIntegrator::with_design`] with an explicit engine
    /// resolution (phase step, phase level for the tail).
    pub fn with_resolution(
        alpha: f64,
        sys_e: &PolarSystem,
        design: &SphereDesign,
        psi: &HomogeneousFunction,
        resolution: (f64, f64),
    ) -> Result<Self> {
        Self::build(alpha, sys_e, design, psi, Some(resolution))
    }

    fn build(
        alpha: f64,
        sys_e: &PolarSystem,
        design: &SphereDesign,
        psi: &HomogeneousFunction,
        resolution: Option<(f64, f64)>,
    ) -> Result<Self> {
        let e = sys_e.operator();
        let et = e.entries().transpose();
        let scale = et.norm_max().max(1.0);
        if psi.operator().entries().max_abs_diff(&et) > 1e-8 * scale {
            return Err(invalid("ψ must be homogeneous for the transposed scaling matrix"));
        }
        let q = e.trace();
        let mut nodes = Vec::with_capacity(design.len());
        let mut extent_tp = 0.0f64;
        for (t, &w) in design.points().zip(design.weights()) {
            let p = psi.eval(t)?;
            if !(p > 0.0) {
                return Err(invalid("ψ vanishes on the sphere"));
            }
            let e_theta = et.mul_vec(t);
            let e2_theta = et.mul_vec(&e_theta);
            extent_tp = extent_tp.max(crate::linalg::norm2(t));
            nodes.push(Node { theta: t.to_vec(), e_theta, e2_theta, weight: w * p.powf(-alpha - q) });
        }
        let extent = extent_tp * sys_e.big_m_e().max(1.0) * 2.0;
        let engine = match resolution {
            None => RadialEngine::new(alpha, e, extent)?,
            Some((r, s)) => RadialEngine::with_resolution(alpha, e, extent, r, s)?,
        };
        Ok(SpectralIntegrator { engine, nodes, q })
    }

    pub fn alpha(&self) -> f64 {
        self.engine.alpha
    }

    pub fn trace(&self) -> f64 {
        self.q
    }

    /// I_α(θ) for θ ∈ S_E (any nonzero θ is accepted; the value is then
    /// the integral for that vector).
    pub fn integral(&self, theta: &[f64]) -> Integral {
        let v0 = self.engine.start_vector(theta);
        let (mut value, mut unc) = (0.0, 0.0);
        for n in &self.nodes {
            let r = self.engine.radial(&v0, &n.theta, &n.e_theta, &n.e2_theta);
            value += n.weight * r.value;
            unc += n.weight * r.uncertainty;
        }
        Integral { value, uncertainty: unc }
    }
}

/// Directional scale C_α(θ) = (c_α I_α(θ))^{1/α} and the marginal scale
/// of increments C_α(ℓ_E(h))τ_E(h).
#[derive(Clone, Debug)]
pub struct DirectionalScale {
    params: StableParams,
    integrator: SpectralIntegrator,
    sys_e: PolarSystem,
}

/// A scale value with the tail flag of its spectral integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleValue {
    pub scale: f64,
    pub flagged: bool,
}

impl DirectionalScale {
    pub fn new(params: StableParams, sys_e: &PolarSystem, sys_et: &PolarSystem, psi: &HomogeneousFunction) -> Result<Self> {
        let integrator = SpectralIntegrator::new(params.alpha, sys_e, sys_et, psi)?;
        Ok(DirectionalScale { params, integrator, sys_e: sys_e.clone() })
    }

    pub fn params(&self) -> &StableParams {
        &self.params
    }

    pub fn polar(&self) -> &PolarSystem {
        &self.sys_e
    }

    /// C_α(θ) for θ ∈ S_E.
    pub fn c_alpha_theta(&self, theta: &[f64]) -> ScaleValue {
        let i = self.integrator.integral(theta);
        ScaleValue { scale: (self.params.cos_moment * i.value).powf(1.0 / self.params.alpha), flagged: i.flagged() }
    }

    /// SαS scale of X(x + h) − X(x).
    pub fn scale_of_increment(&self, h: &[f64]) -> Result<ScaleValue> {
        let (tau, ell) = self.sys_e.tau_ell(h)?;
        if tau == 0.0 {
            return Ok(ScaleValue { scale: 0.0, flagged: false });
        }
        let c = self.c_alpha_theta(&ell);
        Ok(ScaleValue { scale: c.scale * tau, flagged: c.flagged })
    }

    /// (min, max) of C_α over `k` angular nodes of S_E (d = 2) or the two
    /// points of S_E (d = 1).
    pub fn sphere_range(&self, k: usize) -> Result<(f64, f64)> {
        let design = self.sys_e.angular_design(k)?;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for t in design.points() {
            let c = self.c_alpha_theta(t).scale;
            lo = lo.min(c);
            hi = hi.max(c);
        }
        Ok((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polar::Calibration;
    use crate::quadrature::adaptive_gk15;

    fn systems(a: &[f64]) -> (PolarSystem, PolarSystem, HomogeneousFunction) {
        let e = OperatorMatrix::diagonal(a).unwrap();
        let se = PolarSystem::new(&e).unwrap();
        let set = PolarSystem::calibrated(&e.transpose(), &Calibration::default()).unwrap();
        let psi = HomogeneousFunction::diagonal_from_operator(&e.transpose()).unwrap();
        (se, set, psi)
    }

    /// R for d = 1: (|c|^{α/a}/a) ∫₀^∞ |2 sin(w/2)|^α w^{−α/a−1} dw with c = θθ'.
    fn scalar_radial_oracle(alpha: f64, a: f64, c: f64) -> f64 {
        let beta = alpha / a;
        let f = |w: f64| if w == 0.0 { 0.0 } else { (2.0 * (0.5 * w).sin().abs()).powf(alpha) * w.powf(-beta - 1.0) };
        let mut s = adaptive_gk15(f, 0.0, 2.0 * PI, 1e-14, 1e-12).0;
        // periods [2πk, 2π(k+1)] up to a far cut, then the mean-value tail
        let kmax = 20_000;
        for k in 1..kmax {
            s += adaptive_gk15(f, 2.0 * PI * k as f64, 2.0 * PI * (k + 1) as f64, 1e-16, 1e-10).0;
        }
        let w = 2.0 * PI * kmax as f64;
        s += 2f64.powf(alpha + 1.0) * cos_moment(alpha) * w.powf(-beta) / beta;
        c.abs().powf(beta) / a * s
    }

    #[test]
    fn scalar_radial_matches_closed_form_at_alpha_two() {
        for &a in &[1.5, 2.0, 3.0] {
            let e = OperatorMatrix::diagonal(&[a]).unwrap();
            let eng = RadialEngine::new(2.0, &e, 10.0).unwrap();
            let (th, tp) = (0.7, -1.3);
            let r = eng.radial(&eng.start_vector(&[th]), &[tp], &[a * tp], &[a * a * tp]);
            let b = 2.0 / a;
            // ∫(1−cos w)w^{−1−b}dw = Γ(1−b)cos(πb/2)/b, continuous at b = 1
            let g = if (b - 1.0).abs() < 1e-12 { PI / 2.0 } else { libm::tgamma(1.0 - b) * (PI * b / 2.0).cos() / b };
            let exact = (th * tp as f64).abs().powf(b) / a * 2.0 * g;
            assert!((r.value - exact).abs() <= r.uncertainty + 1e-9 * exact, "a={a}: {r:?} vs {exact}");
            assert!(r.uncertainty < 1e-4 * exact);
        }
    }

    #[test]
    fn scalar_radial_matches_independent_quadrature() {
        for &(alpha, a) in &[(1.2, 2.0), (1.5, 3.0), (0.8, 2.0)] {
            let e = OperatorMatrix::diagonal(&[a]).unwrap();
            let eng = RadialEngine::new(alpha, &e, 10.0).unwrap();
            let (th, tp) = (1.1, 0.6);
            let r = eng.radial(&eng.start_vector(&[th]), &[tp], &[a * tp], &[a * a * tp]);
            let exact = scalar_radial_oracle(alpha, a, th * tp);
            assert!((r.value / exact - 1.0).abs() < 2e-3, "α={alpha} a={a}: {} vs {exact}", r.value);
        }
    }

    #[test]
    fn finer_resolution_changes_little() {
        let (se, set, psi) = systems(&[2.0, 3.0]);
        let design = set.design().unwrap();
        let coarse = SpectralIntegrator::with_design(1.5, &se, design, &psi).unwrap();
        let fine = SpectralIntegrator::with_resolution(1.5, &se, design, &psi, (0.05, 120.0)).unwrap();
        let theta = se.ell(&[0.3, 0.5]).unwrap();
        let (c, f) = (coarse.integral(&theta), fine.integral(&theta));
        assert!((c.value / f.value - 1.0).abs() < 1e-3, "{c:?} vs {f:?}");
        assert!(!c.flagged());
    }

    #[test]
    fn sphere_rule_converges() {
        let e = OperatorMatrix::diagonal(&[2.0, 3.0]).unwrap();
        let se = PolarSystem::new(&e).unwrap();
        let psi = HomogeneousFunction::diagonal_from_operator(&e.transpose()).unwrap();
        let set = PolarSystem::new(&e.transpose()).unwrap();
        let theta = se.ell(&[0.4, -0.2]).unwrap();
        let v = |k: usize| {
            SpectralIntegrator::with_design(1.5, &se, &set.angular_design(k).unwrap(), &psi)
                .unwrap()
                .integral(&theta)
                .value
        };
        let (a, b) = (v(512), v(2048));
        assert!((a / b - 1.0).abs() < 2e-3, "{a} vs {b}");
    }

    #[test]
    fn scale_of_increment_is_homogeneous_and_positive() {
        let (se, set, psi) = systems(&[2.0, 3.0]);
        let ds = DirectionalScale::new(StableParams::new(1.5).unwrap(), &se, &set, &psi).unwrap();
        let h = [0.05, -0.03];
        let s1 = ds.scale_of_increment(&h).unwrap();
        let s2 = ds.scale_of_increment(&se.power_apply(2.0, &h).unwrap()).unwrap();
        assert!((s2.scale / (2.0 * s1.scale) - 1.0).abs() < 0.02);
        assert_eq!(ds.scale_of_increment(&[0.0, 0.0]).unwrap().scale, 0.0);
        let mut prev = f64::INFINITY;
        for k in 1..8 {
            let t = 4f64.powi(-k);
            let s = ds.scale_of_increment(&[t, t]).unwrap().scale;
            assert!(s < prev);
            prev = s;
        }
        let (lo, hi) = ds.sphere_range(32).unwrap();
        assert!(lo > 0.0 && hi.is_finite());
    }

    #[test]
    fn directional_scale_is_continuous_on_the_sphere() {
        let (se, set, psi) = systems(&[2.0, 3.0]);
        let ds = DirectionalScale::new(StableParams::new(1.5).unwrap(), &se, &set, &psi).unwrap();
        let rule = se.angular_design(96).unwrap();
        let vals: Vec<f64> = rule.points().map(|t| ds.c_alpha_theta(t).scale).collect();
        for i in 0..vals.len() {
            let j = (i + 1) % vals.len();
            assert!((vals[j] / vals[i] - 1.0).abs() < 0.05, "jump between {i} and {j}");
        }
    }

    #[test]
    fn isotropic_case_has_direction_free_scale() {
        let e = OperatorMatrix::with_positive_spectrum(Matrix::identity(2).scaled(2.0)).unwrap();
        let se = PolarSystem::new(&e).unwrap();
        let set = PolarSystem::calibrated(&e, &Calibration::default()).unwrap();
        let psi = HomogeneousFunction::euclid(0.5, &e).unwrap();
        let integ = SpectralIntegrator::new(2.0, &se, &set, &psi).unwrap();
        let first = integ.integral(&se.ell(&[1.0, 0.0]).unwrap()).value;
        for k in 1..12 {
            let b = k as f64 * 0.5;
            let v = integ.integral(&se.ell(&[b.cos(), b.sin()]).unwrap()).value;
            // trapezoidal rule on a |cos| cusp: O(K⁻²)
            assert!((v / first - 1.0).abs() < 1e-4);
        }
    }
}
