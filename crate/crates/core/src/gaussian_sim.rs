//! Operator scaling Gaussian fields (α = 2).
//!
//! The field is normalised by E[X(x)²] = ∫|e^{i⟨x,ξ⟩} − 1|² ψ(ξ)^{−2−q} dξ,
//! so v²(h) = τ_E(h)² V(ℓ_E(h)) with V = I₂ from [`crate::spectral`].
//! Realizations are exact draws from the covariance
//! ½(v²(x) + v²(y) − v²(x − y)) through a dense Cholesky factor.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, precondition, Error, Result};
use crate::field::{FieldKind, FieldMeta, FieldSample, GridSpec};
use crate::homogeneous::HomogeneousFunction;
use crate::polar::PolarSystem;
use crate::rng::{stream, stream_rng};
use crate::spectral::SpectralIntegrator;

/// Largest number of non-origin nodes accepted by the dense factorization.
pub const MAX_NODES: usize = 4096;
/// Angular nodes of the d = 2 direction table on [0, π).
pub const ANGULAR_NODES: usize = 64;
const KEY_QUANTUM: f64 = 1e-6;

/// How V(θ) is obtained.
#[derive(Clone, Debug)]
enum Directional {
    /// d = 2: trigonometric interpolant in the angle of ℓ (period π, since
    /// V(−θ) = V(θ)), from `ANGULAR_NODES` exact values.
    Angular { cos: Vec<f64>, sin: Vec<f64> },
    /// Exact integrals cached on ℓ rounded to 1e-6.
    Cached(BTreeMap<Vec<i64>, f64>),
}

/// v²(h) = τ_E(h)² V(ℓ_E(h)).
#[derive(Clone, Debug)]
pub struct Variogram {
    sys_e: PolarSystem,
    integrator: SpectralIntegrator,
    directional: Directional,
    psi_id: alloc::string::String,
    flagged: bool,
}

impl Variogram {
    /// `sys_et` must be calibrated (it carries the sphere rule), `psi`
    /// homogeneous for E^t.
    pub fn new(sys_e: &PolarSystem, sys_et: &PolarSystem, psi: &HomogeneousFunction) -> Result<Self> {
        let integrator = SpectralIntegrator::new(2.0, sys_e, sys_et, psi)?;
        let mut vg = Variogram {
            sys_e: sys_e.clone(),
            integrator,
            directional: Directional::Cached(BTreeMap::new()),
            psi_id: psi.id(),
            flagged: false,
        };
        if sys_e.dim() == 2 {
            vg.directional = vg.angular_table()?;
        }
        Ok(vg)
    }

    /// Same integrals with exact (cached) direction values in every dimension.
    pub fn exact(sys_e: &PolarSystem, sys_et: &PolarSystem, psi: &HomogeneousFunction) -> Result<Self> {
        let integrator = SpectralIntegrator::new(2.0, sys_e, sys_et, psi)?;
        Ok(Variogram {
            sys_e: sys_e.clone(),
            integrator,
            directional: Directional::Cached(BTreeMap::new()),
            psi_id: psi.id(),
            flagged: false,
        })
    }

    fn angular_table(&mut self) -> Result<Directional> {
        let n = ANGULAR_NODES;
        let mut vals = Vec::with_capacity(n);
        for k in 0..n {
            let beta = PI * k as f64 / n as f64;
            let u = [beta.cos(), beta.sin()];
            let s = self.sys_e.norm_e(&u);
            vals.push(self.direct(&[u[0] / s, u[1] / s]));
        }
        // V(β) = Σ_m a_m cos(2mβ) + b_m sin(2mβ), m ≤ n/2
        let half = n / 2;
        let mut cos = vec![0.0; half + 1];
        let mut sin = vec![0.0; half + 1];
        for m in 0..=half {
            let (mut a, mut b) = (0.0, 0.0);
            for (k, v) in vals.iter().enumerate() {
                let t = 2.0 * PI * (m * k) as f64 / n as f64;
                a += v * t.cos();
                b += v * t.sin();
            }
            let w = if m == 0 || m == half { 1.0 } else { 2.0 };
            cos[m] = w * a / n as f64;
            sin[m] = if m == half { 0.0 } else { w * b / n as f64 };
        }
        Ok(Directional::Angular { cos, sin })
    }

    fn direct(&mut self, theta: &[f64]) -> f64 {
        let i = self.integrator.integral(theta);
        self.flagged |= i.flagged();
        i.value
    }

    /// True if some spectral integral had a tail bound above 1e-3 relative.
    pub fn flagged(&self) -> bool {
        self.flagged
    }

    pub fn psi_id(&self) -> &str {
        &self.psi_id
    }

    pub fn polar(&self) -> &PolarSystem {
        &self.sys_e
    }

    /// V(θ) for θ ∈ S_E.
    pub fn directional(&mut self, theta: &[f64]) -> f64 {
        match &mut self.directional {
            Directional::Angular { cos, sin } => {
                let beta = theta[1].atan2(theta[0]);
                let mut v = 0.0;
                for m in 0..cos.len() {
                    let (s, c) = (2.0 * m as f64 * beta).sin_cos();
                    v += cos[m] * c + sin[m] * s;
                }
                v
            }
            Directional::Cached(map) => {
                // V(−θ) = V(θ): key on the representative with a positive
                // leading nonzero coordinate
                let sign = theta.iter().find(|v| v.abs() > KEY_QUANTUM).map_or(1.0, |v| v.signum());
                let key: Vec<i64> = theta.iter().map(|v| (sign * v / KEY_QUANTUM).round() as i64).collect();
                if let Some(v) = map.get(&key) {
                    return *v;
                }
                let v = {
                    let i = self.integrator.integral(theta);
                    self.flagged |= i.flagged();
                    i.value
                };
                if let Directional::Cached(map) = &mut self.directional {
                    map.insert(key, v);
                }
                v
            }
        }
    }

    /// v²(h) = E[(X(x + h) − X(x))²].
    pub fn variogram(&mut self, h: &[f64]) -> Result<f64> {
        let (tau, ell) = self.sys_e.tau_ell(h)?;
        if tau == 0.0 {
            return Ok(0.0);
        }
        Ok(tau * tau * self.directional(&ell))
    }
}

/// Packed lower-triangular Cholesky factor.
#[derive(Clone, Debug)]
struct Factor {
    n: usize,
    l: Vec<f64>,
    jitter: f64,
}

impl Factor {
    fn row(&self, i: usize) -> &[f64] {
        let s = i * (i + 1) / 2;
        &self.l[s..s + i + 1]
    }
}

#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let chunks = n / 4;
    for c in 0..chunks {
        let k = 4 * c;
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for k in 4 * chunks..n {
        s += a[k] * b[k];
    }
    s
}

/// Row-oriented Cholesky of a packed lower-triangular covariance with
/// diagonal jitter escalating 0, 1e-12, …, 1e-8 (relative to the mean
/// diagonal).
fn cholesky(cov: &[f64], n: usize) -> Result<Factor> {
    let mean_diag = (0..n).map(|i| cov[i * (i + 1) / 2 + i]).sum::<f64>() / n.max(1) as f64;
    let jitters = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8];
    'jitter: for &j in &jitters {
        let add = j * mean_diag;
        let mut l = cov.to_vec();
        for i in 0..n {
            let si = i * (i + 1) / 2;
            for k in 0..=i {
                let sk = k * (k + 1) / 2;
                let mut v = {
                    let (head, tail) = l.split_at(si);
                    let row_k = if k == i { &tail[..k] } else { &head[sk..sk + k] };
                    tail[k] - dot4(&tail[..k], row_k)
                };
                if k == i {
                    v += add;
                    if !(v > 0.0) {
                        continue 'jitter;
                    }
                    l[si + k] = v.sqrt();
                } else {
                    l[si + k] = v / l[sk + k];
                }
            }
        }
        return Ok(Factor { n, l, jitter: add });
    }
    let mut full = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for k in 0..=i {
            let v = cov[i * (i + 1) / 2 + k];
            full[(i, k)] = v;
            full[(k, i)] = v;
        }
    }
    let min = full.symmetric_eigenvalues().iter().fold(f64::INFINITY, |m, &v| m.min(v));
    Err(Error::NotPositiveDefinite { min_eigenvalue: min })
}

/// A factorised covariance over a fixed point set, ready for draws.
#[derive(Clone, Debug)]
pub struct GaussianField {
    points: Vec<Vec<f64>>,
    /// Index into `points` for each factor row; origin nodes are excluded
    /// and pinned to 0.
    active: Vec<usize>,
    factor: Factor,
    variances: Vec<f64>,
}

impl GaussianField {
    /// Factorises the covariance of the field at `points`.
    pub fn new(vg: &mut Variogram, points: &[Vec<f64>]) -> Result<Self> {
        let d = vg.sys_e.dim();
        if points.is_empty() {
            return Err(precondition("no points to simulate"));
        }
        for p in points {
            if p.len() != d {
                return Err(Error::Dimension { expected: d, got: p.len() });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(invalid("points must be finite"));
            }
        }
        let active: Vec<usize> = (0..points.len()).filter(|&i| points[i].iter().any(|&v| v != 0.0)).collect();
        if active.len() > MAX_NODES {
            return Err(precondition(alloc::format!(
                "{} nodes exceed the dense factorization bound of {MAX_NODES}",
                active.len()
            )));
        }
        let n = active.len();
        let var: Vec<f64> = active.iter().map(|&i| vg.variogram(&points[i])).collect::<Result<_>>()?;
        let mut cov = vec![0.0; n * (n + 1) / 2];
        let mut diff = vec![0.0; d];
        for i in 0..n {
            for k in 0..i {
                for (j, v) in diff.iter_mut().enumerate() {
                    *v = points[active[i]][j] - points[active[k]][j];
                }
                cov[i * (i + 1) / 2 + k] = 0.5 * (var[i] + var[k] - vg.variogram(&diff)?);
            }
            cov[i * (i + 1) / 2 + i] = var[i];
        }
        let factor = cholesky(&cov, n)?;
        let mut variances = vec![0.0; points.len()];
        for (r, &i) in active.iter().enumerate() {
            variances[i] = var[r];
        }
        Ok(GaussianField { points: points.to_vec(), active, factor, variances })
    }

    /// Factorises the covariance on a rectangular grid, computing v² once
    /// per distinct lattice difference.
    pub fn on_grid(vg: &mut Variogram, grid: &GridSpec) -> Result<Self> {
        let d = grid.dim();
        if d != vg.sys_e.dim() {
            return Err(Error::Dimension { expected: vg.sys_e.dim(), got: d });
        }
        let points: Vec<Vec<f64>> = grid.nodes().collect();
        let active: Vec<usize> = (0..points.len()).filter(|&i| points[i].iter().any(|&v| v != 0.0)).collect();
        if active.len() > MAX_NODES {
            return Err(precondition(alloc::format!(
                "{} nodes exceed the dense factorization bound of {MAX_NODES}",
                active.len()
            )));
        }
        let shape = grid.shape();
        let steps: Vec<f64> = grid.axes().iter().map(|a| a.step()).collect();
        // difference lattice: offsets k_j ∈ [−(n_j−1), n_j−1], v²(−h) = v²(h)
        let dims: Vec<usize> = shape.iter().map(|&c| 2 * c - 1).collect();
        let total: usize = dims.iter().product();
        let mut lattice = vec![f64::NAN; total];
        let lattice_index = |off: &[i64]| -> usize {
            off.iter().zip(&shape).zip(&dims).fold(0usize, |acc, ((&o, &c), &m)| acc * m + (o + c as i64 - 1) as usize)
        };
        let idx: Vec<Vec<usize>> = (0..points.len()).map(|i| grid.multi_index(i)).collect();
        let n = active.len();
        let var: Vec<f64> = active.iter().map(|&i| vg.variogram(&points[i])).collect::<Result<_>>()?;
        let mut cov = vec![0.0; n * (n + 1) / 2];
        let mut off = vec![0i64; d];
        let mut h = vec![0.0; d];
        for i in 0..n {
            for k in 0..i {
                for j in 0..d {
                    off[j] = idx[active[i]][j] as i64 - idx[active[k]][j] as i64;
                }
                // canonical sign: first nonzero offset positive
                if off.iter().find(|&&o| o != 0).is_some_and(|&o| o < 0) {
                    off.iter_mut().for_each(|o| *o = -*o);
                }
                let li = lattice_index(&off);
                if lattice[li].is_nan() {
                    for j in 0..d {
                        h[j] = off[j] as f64 * steps[j];
                    }
                    lattice[li] = vg.variogram(&h)?;
                }
                cov[i * (i + 1) / 2 + k] = 0.5 * (var[i] + var[k] - lattice[li]);
            }
            cov[i * (i + 1) / 2 + i] = var[i];
        }
        let factor = cholesky(&cov, n)?;
        let mut variances = vec![0.0; points.len()];
        for (r, &i) in active.iter().enumerate() {
            variances[i] = var[r];
        }
        Ok(GaussianField { points, active, factor, variances })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// v²(x) at each point.
    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Diagonal jitter that was needed (0 if none).
    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    /// Realization `index` of `seed`.
    pub fn draw(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, stream::GAUSSIAN_DRAWS, index);
        let n = self.factor.n;
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut out = vec![0.0; self.points.len()];
        for (r, &i) in self.active.iter().enumerate() {
            out[i] = dot4(self.factor.row(r), &z[..=r]);
        }
        out
    }
}

/// `n_real` realizations on `grid` from stream (seed, GAUSSIAN_DRAWS, r).
pub fn simulate_gaussian(vg: &mut Variogram, grid: &GridSpec, n_real: usize, seed: u64) -> Result<Vec<FieldSample>> {
    let field = GaussianField::on_grid(vg, grid)?;
    let matrix = vg.sys_e.operator().entries().clone();
    (0..n_real as u64)
        .map(|r| {
            let meta = FieldMeta {
                kind: FieldKind::Gaussian,
                alpha: 2.0,
                matrix: matrix.clone(),
                psi: vg.psi_id.clone(),
                seed,
                realization: r,
                terms: 0,
                tail_variance: 0.0,
            };
            FieldSample::new(grid.clone(), field.draw(seed, r), meta)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator_algebra::OperatorMatrix;
    use crate::polar::Calibration;
    use crate::quadrature::adaptive_gk15;

    fn variogram(a: &[f64]) -> Variogram {
        let e = OperatorMatrix::diagonal(a).unwrap();
        let se = PolarSystem::new(&e).unwrap();
        let set = PolarSystem::calibrated(&e.transpose(), &Calibration::default()).unwrap();
        let psi = HomogeneousFunction::radial(PolarSystem::new(&e.transpose()).unwrap());
        Variogram::new(&se, &set, &psi).unwrap()
    }

    fn isotropic(h: f64) -> Variogram {
        let e = OperatorMatrix::diagonal(&[1.0 / h, 1.0 / h]).unwrap();
        let se = PolarSystem::new(&e).unwrap();
        let set = PolarSystem::calibrated(&e.transpose(), &Calibration::default()).unwrap();
        let psi = HomogeneousFunction::euclid(h, &e.transpose()).unwrap();
        Variogram::new(&se, &set, &psi).unwrap()
    }

    #[test]
    fn scaling_symmetry_and_origin() {
        let mut vg = variogram(&[2.0, 3.0]);
        assert_eq!(vg.variogram(&[0.0, 0.0]).unwrap(), 0.0);
        let e = vg.polar().operator().clone();
        let p2 = e.power(2.0).unwrap();
        for h in [[0.3, 0.1], [-0.05, 0.2], [0.01, -0.002]] {
            let v = vg.variogram(&h).unwrap();
            let scaled = vg.variogram(&p2.mul_vec(&h)).unwrap();
            assert!((scaled / (4.0 * v) - 1.0).abs() < 0.03);
            let neg = vg.variogram(&[-h[0], -h[1]]).unwrap();
            assert!((neg / v - 1.0).abs() < 1e-9);
        }
        assert!(!vg.flagged());
    }

    #[test]
    fn angular_table_matches_exact_integrals() {
        let e = OperatorMatrix::diagonal(&[2.0, 3.0]).unwrap();
        let se = PolarSystem::new(&e).unwrap();
        let set = PolarSystem::calibrated(&e.transpose(), &Calibration::default()).unwrap();
        let psi = HomogeneousFunction::radial(PolarSystem::new(&e.transpose()).unwrap());
        let mut table = Variogram::new(&se, &set, &psi).unwrap();
        let mut exact = Variogram::exact(&se, &set, &psi).unwrap();
        for k in 0..23 {
            let b = 0.137 + k as f64 * 0.2731;
            let h = [0.2 * b.cos(), 0.2 * b.sin()];
            let (a, x) = (table.variogram(&h).unwrap(), exact.variogram(&h).unwrap());
            assert!((a / x - 1.0).abs() < 1e-4, "{a} vs {x}");
        }
    }

    #[test]
    fn isotropic_field_matches_closed_form() {
        let h = 0.5;
        let mut vg = isotropic(h);
        // oracle: ∫|e^{i⟨e₁,ξ⟩}−1|²|ξ|^{−2−2H}dξ in Euclidean polar
        // coordinates, radial part ∫4sin²(s/2)s^{−1−2H}ds times |cos β|^{2H}
        let (radial, _) = adaptive_gk15(
            |t: f64| {
                // s = t/(1−t) maps [0,1) onto [0,∞)
                let s = t / (1.0 - t);
                let jac = 1.0 / ((1.0 - t) * (1.0 - t));
                if s == 0.0 {
                    0.0
                } else {
                    4.0 * (0.5 * s).sin().powi(2) * s.powf(-1.0 - 2.0 * h) * jac
                }
            },
            0.0,
            1.0 - 1e-12,
            1e-12,
            1e-10,
        );
        // the radial tail beyond s = 1e12 adds 2(1e12)^{−2H}/(2H) at most
        let (angular, _) = adaptive_gk15(|b: f64| b.cos().abs().powf(2.0 * h), 0.0, 2.0 * PI, 1e-13, 1e-13);
        let oracle = radial * angular;
        for k in 0..8 {
            let b = k as f64 * PI / 8.0 + 0.05;
            let r = 0.3;
            let v = vg.variogram(&[r * b.cos(), r * b.sin()]).unwrap();
            let ratio = v / r.powf(2.0 * h);
            assert!((ratio / oracle - 1.0).abs() < 0.01, "direction {k}: {ratio} vs {oracle}");
        }
    }

    #[test]
    fn envelope_ratio_is_bounded() {
        let mut vg = variogram(&[2.0, 3.0]);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for k in 0..40 {
            let b = k as f64 * 0.61;
            let r = 10f64.powf(-(k % 5) as f64);
            let h = [r * b.cos(), r * b.sin()];
            let tau = vg.polar().tau(&h).unwrap();
            let ratio = vg.variogram(&h).unwrap() / (tau * tau);
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        assert!(lo > 0.0 && hi / lo < 50.0);
    }

    #[test]
    fn draws_have_the_variogram_law() {
        let mut vg = variogram(&[2.0, 3.0]);
        let grid = GridSpec::parse("0:0.5:3,0:0.5:3").unwrap();
        let field = GaussianField::on_grid(&mut vg, &grid).unwrap();
        let general = GaussianField::new(&mut vg, field.points()).unwrap();
        assert_eq!(field.draw(1, 0), general.draw(1, 0));
        let n = 5000;
        let draws: Vec<Vec<f64>> = (0..n).map(|r| field.draw(7, r)).collect();
        assert!(draws.iter().all(|d| d[0] == 0.0));
        for node in [4usize, 8] {
            let emp = draws.iter().map(|d| d[node] * d[node]).sum::<f64>() / n as f64;
            let v = field.variances()[node];
            // 3% is about 2 standard errors at n = 5000
            assert!((emp / v - 1.0).abs() < 0.03, "node {node}: {emp} vs {v}");
        }
        // increments between nodes 4 and 5
        let inc: Vec<f64> = draws.iter().map(|d| d[5] - d[4]).collect();
        let m2 = inc.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let m4 = inc.iter().map(|x| x.powi(4)).sum::<f64>() / n as f64;
        let kurt = m4 / (m2 * m2);
        assert!((2.8..=3.2).contains(&kurt), "kurtosis {kurt}");
        let dv = vg.variogram(&[0.0, 0.25]).unwrap();
        assert!((m2 / dv - 1.0).abs() < 0.05);
    }

    #[test]
    fn factorization_reports_indefinite_input() {
        // a symmetric matrix with eigenvalues 3 and −1
        let cov = [1.0, 2.0, 1.0];
        match cholesky(&cov, 2) {
            Err(Error::NotPositiveDefinite { min_eigenvalue }) => assert!((min_eigenvalue + 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        let f = cholesky(&[4.0, 2.0, 5.0], 2).unwrap();
        assert_eq!(f.l, [2.0, 1.0, 2.0]);
    }
}
