//! Moving-average operator scaling stable fields.
//!
//! Z(x) = ∫ (φ(x − y)^{1−q/α} − φ(−y)^{1−q/α}) M_α(dy) for a real SαS
//! random measure M_α with Lebesgue control, simulated by the real LePage
//! series
//!
//!   Z(x) = C'_α Σ_n T_n^{−1/α} m_Y(y_n)^{−1/α} (φ(x − y_n)^p − φ(−y_n)^p) γ_n,
//!
//! p = 1 − q/α, with y_n i.i.d. from the location density m_Y and standard
//! normal γ_n.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{invalid, precondition, Error, Result};
use crate::field::{Axis, FieldKind, FieldMeta, FieldSample, GridSpec};
use crate::homogeneous::{HomogeneousFunction, PsiKind};
use crate::polar::gaussian_unit;
use crate::rng::{stream, stream_rng};
use crate::stable_core::ma_constant;

/// Default series length for moving-average fields.
pub const DEFAULT_MA_TERMS: usize = 100_000;

/// Isotropic location law: y = ρω with ω uniform on the unit sphere and
/// P(ρ > r) = (1 + r)^{−(d+1)}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocationDensity {
    pub dim: usize,
}

impl LocationDensity {
    /// Surface area of the unit sphere in ℝ^d.
    fn sphere_area(&self) -> f64 {
        let d = self.dim as f64;
        2.0 * core::f64::consts::PI.powf(0.5 * d) / libm::tgamma(0.5 * d)
    }

    /// m_Y(y) = (d+1)(1+ρ)^{−(d+2)} / (ω_d ρ^{d−1}).
    pub fn eval(&self, y: &[f64]) -> f64 {
        let rho = crate::linalg::norm2(y);
        self.at_radius(rho)
    }

    fn at_radius(&self, rho: f64) -> f64 {
        self.at_radius_with(rho, self.sphere_area())
    }

    fn at_radius_with(&self, rho: f64, area: f64) -> f64 {
        let d = self.dim as f64;
        let tail = (1.0 + rho).powf(-(d + 2.0));
        match self.dim {
            1 => 2.0 * tail / area,
            _ => (d + 1.0) * tail / (area * rho.powf(d - 1.0)),
        }
    }

    /// Writes y into `out` and returns ρ = |y|.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> f64 {
        let w = 1.0 - rng.random::<f64>();
        let rho = w.powf(-1.0 / (self.dim as f64 + 1.0)) - 1.0;
        if self.dim == 1 {
            out[0] = if rng.random::<bool>() { rho } else { -rho };
        } else {
            for (o, v) in out.iter_mut().zip(gaussian_unit(self.dim, rng)) {
                *o = rho * v;
            }
        }
        rho
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let mut y = vec![0.0; self.dim];
        let rho = self.sample_into(rng, &mut y);
        (y, rho)
    }
}

/// Frozen real LePage ensemble with per-term weights
/// C'_α T_n^{−1/α} m_Y(y_n)^{−1/α} γ_n.
#[derive(Clone, Debug, PartialEq)]
pub struct MAEnsemble {
    pub alpha: f64,
    pub seed: u64,
    pub index: u64,
    pub dim: usize,
    pub arrivals: Vec<f64>,
    /// y_n, flattened.
    pub locations: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub constant: f64,
    weights: Vec<f64>,
}

impl MAEnsemble {
    /// Ensemble `index` of `seed` with `n_terms` terms; the first terms do
    /// not depend on the requested length.
    pub fn build(alpha: f64, dim: usize, n_terms: usize, seed: u64, index: u64) -> Result<Self> {
        if n_terms == 0 {
            return Err(precondition("the series needs at least one term"));
        }
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        let constant = ma_constant(alpha)?;
        let dens = LocationDensity { dim };
        let mut rng = stream_rng(seed, stream::MOVING_AVERAGE, index);
        let mut arrivals = Vec::with_capacity(n_terms);
        let mut locations = Vec::with_capacity(n_terms * dim);
        let mut multipliers = Vec::with_capacity(n_terms);
        let mut weights = Vec::with_capacity(n_terms);
        let area = dens.sphere_area();
        let mut y = vec![0.0; dim];
        let mut t = 0.0;
        for _ in 0..n_terms {
            let e: f64 = Exp1.sample(&mut rng);
            t += e;
            let rho = dens.sample_into(&mut rng, &mut y);
            let g: f64 = StandardNormal.sample(&mut rng);
            let m = dens.at_radius_with(rho, area);
            arrivals.push(t);
            locations.extend_from_slice(&y);
            multipliers.push(g);
            weights.push(constant * (t * m).powf(-1.0 / alpha) * g);
        }
        Ok(MAEnsemble { alpha, seed, index, dim, arrivals, locations, multipliers, constant, weights })
    }

    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }

    pub fn location(&self, n: usize) -> &[f64] {
        &self.locations[n * self.dim..(n + 1) * self.dim]
    }
}

/// Kernel φ^p with a closed form for coordinate-diagonal φ.
#[derive(Clone, Debug)]
enum Kernel<'a> {
    /// φ(x) = (Σ_j |x_j|^{2/a_j})^{1/2}: stores 2/a_j.
    Diagonal(Vec<f64>),
    General(&'a HomogeneousFunction),
}

impl<'a> Kernel<'a> {
    fn new(phi: &'a HomogeneousFunction) -> Self {
        if let PsiKind::Diagonal { thetas, exponents } = phi.kind() {
            let d = exponents.len();
            let identity = (0..d).all(|i| (0..d).all(|j| thetas[(i, j)] == if i == j { 1.0 } else { 0.0 }));
            if identity {
                return Kernel::Diagonal(exponents.iter().map(|a| 2.0 / a).collect());
            }
        }
        Kernel::General(phi)
    }

    /// φ(x)² for the diagonal form, φ(x) otherwise.
    fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            Kernel::Diagonal(pw) => Ok(x.iter().zip(pw).map(|(v, p)| v.abs().powf(*p)).sum()),
            Kernel::General(phi) => phi.eval(x),
        }
    }

    /// Exponent applied to `eval` so that the result is φ^p.
    fn power(&self, p: f64) -> f64 {
        match self {
            Kernel::Diagonal(_) => 0.5 * p,
            Kernel::General(_) => p,
        }
    }
}

/// Evaluates Z on points or grids for a fixed ensemble and φ.
#[derive(Clone, Debug)]
pub struct MovingAverageField<'a> {
    ens: &'a MAEnsemble,
    phi: &'a HomogeneousFunction,
    kernel: Kernel<'a>,
    p: f64,
    /// φ(−y_n)^p
    offsets: Vec<f64>,
}

impl<'a> MovingAverageField<'a> {
    pub fn new(ens: &'a MAEnsemble, phi: &'a HomogeneousFunction) -> Result<Self> {
        if phi.dim() != ens.dim {
            return Err(Error::Dimension { expected: ens.dim, got: phi.dim() });
        }
        let q = phi.operator().trace();
        let p = 1.0 - q / ens.alpha;
        let kernel = Kernel::new(phi);
        let pk = kernel.power(p);
        let mut offsets = Vec::with_capacity(ens.len());
        let mut neg = vec![0.0; ens.dim];
        for n in 0..ens.len() {
            for (v, y) in neg.iter_mut().zip(ens.location(n)) {
                *v = -y;
            }
            let s = kernel.eval(&neg)?;
            if !(s > 1e-300) {
                return Err(Error::SingularKernel { node: usize::MAX, term: n });
            }
            offsets.push(s.powf(pk));
        }
        Ok(MovingAverageField { ens, phi, kernel, p, offsets })
    }

    /// Kernel exponent 1 − q/α.
    pub fn exponent(&self) -> f64 {
        self.p
    }

    pub fn evaluate_points(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        let d = self.ens.dim;
        let pk = self.kernel.power(self.p);
        let mut out = vec![0.0; points.len()];
        let mut diff = vec![0.0; d];
        for (i, x) in points.iter().enumerate() {
            if x.len() != d {
                return Err(Error::Dimension { expected: d, got: x.len() });
            }
            if x.iter().all(|&v| v == 0.0) {
                continue;
            }
            let mut acc = 0.0;
            for n in 0..self.ens.len() {
                for ((v, a), y) in diff.iter_mut().zip(x).zip(self.ens.location(n)) {
                    *v = a - y;
                }
                let s = self.kernel.eval(&diff)?;
                if !(s > 1e-300) {
                    return Err(Error::SingularKernel { node: i, term: n });
                }
                acc += self.ens.weights[n] * (s.powf(pk) - self.offsets[n]);
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// One realization on a grid; the diagonal kernel uses per-axis tables.
    pub fn evaluate_grid(&self, grid: &GridSpec) -> Result<FieldSample> {
        let values = match &self.kernel {
            Kernel::Diagonal(pw) => self.grid_diagonal(grid, pw)?,
            Kernel::General(_) => self.evaluate_points(&grid.nodes().collect::<Vec<_>>())?,
        };
        let meta = FieldMeta {
            kind: FieldKind::MovingAverage,
            alpha: self.ens.alpha,
            matrix: self.phi.operator().entries().clone(),
            psi: self.phi.id(),
            seed: self.ens.seed,
            realization: self.ens.index,
            terms: self.ens.len(),
            tail_variance: 0.0,
        };
        FieldSample::new(grid.clone(), values, meta)
    }

    fn grid_diagonal(&self, grid: &GridSpec, pw: &[f64]) -> Result<Vec<f64>> {
        let d = self.ens.dim;
        if grid.dim() != d {
            return Err(Error::Dimension { expected: d, got: grid.dim() });
        }
        let pk = 0.5 * self.p;
        let axes: Vec<Axis> = grid.axes().to_vec();
        let coords: Vec<Vec<f64>> = axes.iter().map(|a| (0..a.count).map(|k| a.coord(k)).collect()).collect();
        let n_nodes = grid.len();
        let idx: Vec<Vec<usize>> = (0..n_nodes).map(|i| grid.multi_index(i)).collect();
        let origin = grid.find(&vec![0.0; d]);
        let mut values = vec![0.0; n_nodes];
        let mut tables: Vec<Vec<f64>> = coords.iter().map(|c| vec![0.0; c.len()]).collect();
        for n in 0..self.ens.len() {
            let y = self.ens.location(n);
            for j in 0..d {
                for (t, c) in tables[j].iter_mut().zip(&coords[j]) {
                    *t = (c - y[j]).abs().powf(pw[j]);
                }
            }
            let w = self.ens.weights[n];
            let off = self.offsets[n];
            for (node, v) in values.iter_mut().enumerate() {
                let mut s = 0.0;
                for j in 0..d {
                    s += tables[j][idx[node][j]];
                }
                if !(s > 1e-300) {
                    return Err(Error::SingularKernel { node, term: n });
                }
                *v += w * (s.powf(pk) - off);
            }
        }
        if let Some(o) = origin {
            values[o] = 0.0;
        }
        Ok(values)
    }
}

/// Full pipeline for one realization on a grid.
pub fn evaluate_ma_field(ens: &MAEnsemble, phi: &HomogeneousFunction, grid: &GridSpec) -> Result<FieldSample> {
    MovingAverageField::new(ens, phi)?.evaluate_grid(grid)
}

/// Grid-refinement maxima of |Z| on one frozen realization.
#[derive(Clone, Debug, PartialEq)]
pub struct UnboundednessReport {
    /// max |Z| over the nodes of level k (grid spacing r/2^{k+1}).
    pub maxima: Vec<f64>,
    pub nodes: Vec<usize>,
    pub strictly_increasing: bool,
}

/// Evaluates Z once on the finest lattice inside the ball and reports the
/// maximum over each nested sublattice. Level k has spacing r/2^{k+1}, so
/// every level contains all nodes of the coarser ones.
pub fn unboundedness_probe(
    ens: &MAEnsemble,
    phi: &HomogeneousFunction,
    center: &[f64],
    radius: f64,
    levels: usize,
) -> Result<UnboundednessReport> {
    let d = ens.dim;
    if center.len() != d {
        return Err(Error::Dimension { expected: d, got: center.len() });
    }
    if !(radius > 0.0) || levels == 0 {
        return Err(precondition("the probe needs a positive radius and at least one level"));
    }
    // finest spacing r/2^levels: 2^{levels+1} intervals across the diameter
    let count = (1usize << (levels + 1)) + 1;
    let axes: Vec<Axis> = center.iter().map(|&c| Axis { start: c - radius, stop: c + radius, count }).collect();
    let grid = GridSpec::new(axes)?;
    let values = MovingAverageField::new(ens, phi)?.evaluate_grid(&grid)?.values;
    let mut maxima = vec![0.0f64; levels];
    let mut nodes = vec![0usize; levels];
    for i in 0..grid.len() {
        let x = grid.node(i);
        let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
        if r2 > radius * radius * (1.0 + 1e-12) {
            continue;
        }
        let mi = grid.multi_index(i);
        for (lvl, (m, c)) in maxima.iter_mut().zip(nodes.iter_mut()).enumerate() {
            let stride = 1usize << (levels - 1 - lvl);
            if mi.iter().all(|k| k % stride == 0) {
                *m = m.max(values[i].abs());
                *c += 1;
            }
        }
    }
    let strictly_increasing = maxima.windows(2).all(|w| w[1] > w[0]);
    Ok(UnboundednessReport { maxima, nodes, strictly_increasing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::operator_algebra::OperatorMatrix;
    use crate::quadrature::adaptive_gk15;
    use crate::stable_core::sample_sas;
    use std::vec::Vec;

    fn phi(a: &[f64]) -> HomogeneousFunction {
        HomogeneousFunction::diagonal(&Matrix::identity(a.len()), a).unwrap()
    }

    #[test]
    fn location_density_integrates_to_one() {
        for d in 1..=3usize {
            let dens = LocationDensity { dim: d };
            // ∫ m_Y = ∫₀^∞ m(ρ) ω_d ρ^{d−1} dρ
            let (v, _) = adaptive_gk15(
                |t: f64| {
                    let r = t / (1.0 - t);
                    dens.at_radius(r) * dens.sphere_area() * r.powi(d as i32 - 1) / ((1.0 - t) * (1.0 - t))
                },
                1e-12,
                1.0 - 1e-9,
                1e-12,
                1e-10,
            );
            assert!((v - 1.0).abs() < 1e-6, "d={d}: {v}");
        }
    }

    #[test]
    fn origin_vanishes_and_grid_matches_points() {
        let f = phi(&[2.0, 3.0]);
        let ens = MAEnsemble::build(1.5, 2, 3000, 4, 0).unwrap();
        let grid = GridSpec::parse("-0.5:0.5:5,0:1:4").unwrap();
        let fs = evaluate_ma_field(&ens, &f, &grid).unwrap();
        let o = grid.find(&[0.0, 0.0]).unwrap();
        assert_eq!(fs.values[o], 0.0);
        let pts: Vec<Vec<f64>> = grid.nodes().collect();
        let direct = MovingAverageField::new(&ens, &f).unwrap().evaluate_points(&pts).unwrap();
        for (a, b) in fs.values.iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
        }
        // the general path (φ through a non-identity basis) agrees too
        let rot = HomogeneousFunction::diagonal_with_operator(
            &Matrix::identity(2),
            &[2.0, 3.0],
            &OperatorMatrix::diagonal(&[2.0, 3.0]).unwrap(),
        )
        .unwrap();
        let general = MovingAverageField { kernel: Kernel::General(&rot), ..MovingAverageField::new(&ens, &rot).unwrap() };
        let g = general.evaluate_points(&pts[..3]).unwrap();
        for (a, b) in g.iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn marginal_is_symmetric() {
        let f = phi(&[2.0]);
        let vals: Vec<f64> = (0..2000)
            .map(|r| {
                let ens = MAEnsemble::build(1.5, 1, 500, 8, r).unwrap();
                MovingAverageField::new(&ens, &f).unwrap().evaluate_points(&[vec![1.0]]).unwrap()[0]
            })
            .collect();
        let mut v = vals.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        for p in [0.1, 0.25] {
            let lo = v[(p * n as f64) as usize];
            let hi = v[((1.0 - p) * n as f64) as usize];
            // quantile standard error ≈ √(p(1−p)/n)/density, density ≳ 0.15 here
            let se = (p * (1.0 - p) / n as f64).sqrt() / 0.15;
            assert!((lo + hi).abs() < 3.0 * se * 2f64.sqrt(), "p={p}: {lo} {hi}");
        }
    }

    #[test]
    fn unit_kernel_scale() {
        // with locations and kernel replaced by a unit weight, the series is
        // standard SαS: compare quartiles with direct CMS draws
        let alpha = 1.5;
        let c = ma_constant(alpha).unwrap();
        let n = 4000;
        let mut rng = stream_rng(2, stream::TEST_POINTS, 0);
        let mut series = Vec::with_capacity(n);
        for _ in 0..n {
            let mut t = 0.0;
            let mut s = 0.0;
            for _ in 0..2000 {
                let e: f64 = Exp1.sample(&mut rng);
                t += e;
                let g: f64 = StandardNormal.sample(&mut rng);
                s += t.powf(-1.0 / alpha) * g;
            }
            series.push(c * s);
        }
        let mut direct: Vec<f64> = (0..n).map(|_| sample_sas(alpha, &mut rng)).collect();
        series.sort_by(f64::total_cmp);
        direct.sort_by(f64::total_cmp);
        let iqr = |v: &[f64]| v[3 * n / 4] - v[n / 4];
        assert!((iqr(&series) / iqr(&direct) - 1.0).abs() < 0.08);
    }

    #[test]
    fn probe_levels_are_nested_and_deterministic() {
        let f = phi(&[2.0, 3.0]);
        let ens = MAEnsemble::build(1.5, 2, 2000, 3, 0).unwrap();
        let a = unboundedness_probe(&ens, &f, &[0.5, 0.5], 0.25, 3).unwrap();
        let b = unboundedness_probe(&ens, &f, &[0.5, 0.5], 0.25, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.maxima.windows(2).all(|w| w[1] >= w[0]));
        assert!(a.nodes.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(MAEnsemble::build(1.5, 2, 10, 3, 0).unwrap().arrivals[..], ens.arrivals[..10]);
    }
}
