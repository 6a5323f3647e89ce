//! Estimators for directional regularity, moduli of continuity, the
//! operator scaling law and box-counting dimension.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, precondition, Error, Result};
use crate::field::{FieldKind, FieldMeta, FieldSample, GridSpec};
use crate::linalg::Matrix;
use crate::operator_algebra::OperatorMatrix;
use crate::polar::PolarSystem;
use crate::rng::{stream, stream_rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimateKind {
    HolderDirection,
    BoxDimension,
    ModulusRatio,
    ScalingKs,
}

impl EstimateKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimateKind::HolderDirection => "holder_direction",
            EstimateKind::BoxDimension => "box_dimension",
            EstimateKind::ModulusRatio => "modulus_ratio",
            EstimateKind::ScalingKs => "scaling_ks",
        }
    }
}

/// Outcome of an estimator: per-scale statistics and a point estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateReport {
    pub kind: EstimateKind,
    /// Free-form description of the inputs.
    pub inputs: String,
    /// Scale of each statistic (lag length, box size, δ, or coefficient
    /// vector index).
    pub scales: Vec<f64>,
    pub statistics: Vec<f64>,
    pub estimate: f64,
    pub half_width: f64,
    pub r_squared: f64,
    pub residual_max: f64,
    /// Verdict of the built-in criterion, where the estimator has one.
    pub passed: Option<bool>,
}

/// Least-squares line y = a + b x.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    pub residual_max: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(Error::InsufficientData(alloc::format!("regression needs ≥ 3 paired points, got {n}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData("regression abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let resid: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - intercept - slope * a).collect();
    let sse: f64 = resid.iter().map(|r| r * r).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(LineFit {
        intercept,
        slope,
        slope_stderr: (sse / (nf - 2.0) / sxx).sqrt(),
        r_squared,
        residual_max: resid.iter().fold(0.0f64, |m, r| m.max(r.abs())),
    })
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *m;
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        0.5 * (lo + hi)
    }
}

/// Number of realization batches behind the Hölder half-width.
pub const HOLDER_BATCHES: usize = 8;

fn holder_medians(fields: &[FieldSample], axis: usize, lags: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let grid = &fields[0].grid;
    let count = grid.axes()[axis].count;
    let step = grid.axes()[axis].step();
    let stride: usize = grid.shape()[axis + 1..].iter().product();
    let mut scales = Vec::new();
    let mut stats = Vec::new();
    let mut buf = Vec::new();
    for &lag in lags {
        if lag == 0 || lag >= count {
            continue;
        }
        buf.clear();
        for f in fields {
            for i in 0..grid.len() {
                let k = (i / stride) % count;
                if k + lag < count {
                    buf.push((f.values[i + lag * stride] - f.values[i]).abs());
                }
            }
        }
        let m = median_in_place(&mut buf);
        if m > 0.0 && m.is_finite() {
            scales.push(lag as f64 * step);
            stats.push(m);
        }
    }
    (scales, stats)
}

fn log_slope(scales: &[f64], stats: &[f64]) -> Result<LineFit> {
    let lx: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
    let ly: Vec<f64> = stats.iter().map(|s| s.ln()).collect();
    ols(&lx, &ly)
}

/// Ĥ(u) for u = e_axis: slope of log M(δ) against log δ, where M(δ) is the
/// median of |X(t + δu) − X(t)| over grid nodes t and realizations, and δ
/// runs over `lags` (in grid steps).
///
/// With two or more realizations the half-width is twice the standard error
/// of the slope across up to `HOLDER_BATCHES` disjoint realization batches;
/// with one it is twice the regression standard error.
pub fn directional_holder(fields: &[FieldSample], axis: usize, lags: &[usize]) -> Result<EstimateReport> {
    let first = fields.first().ok_or_else(|| precondition("no fields given"))?;
    let grid = &first.grid;
    if axis >= grid.dim() {
        return Err(invalid(alloc::format!("direction e{} is not a grid axis", axis + 1)));
    }
    if fields.iter().any(|f| f.grid != *grid) {
        return Err(invalid("all realizations must share one grid"));
    }
    let (scales, stats) = holder_medians(fields, axis, lags);
    if scales.len() < 5 {
        return Err(Error::InsufficientData(alloc::format!("{} usable scales, need 5", scales.len())));
    }
    let span = (scales[scales.len() - 1] / scales[0]).log2();
    if span < 3.0 {
        return Err(Error::InsufficientData(alloc::format!("scales span {span:.2} octaves, need 3")));
    }
    let fit = log_slope(&scales, &stats)?;
    let batches = fields.len().min(HOLDER_BATCHES);
    let mut half_width = 2.0 * fit.slope_stderr;
    if batches >= 2 {
        let mut slopes = Vec::with_capacity(batches);
        for b in 0..batches {
            let lo = b * fields.len() / batches;
            let hi = (b + 1) * fields.len() / batches;
            let (sc, st) = holder_medians(&fields[lo..hi], axis, lags);
            if sc.len() >= 3 {
                slopes.push(log_slope(&sc, &st)?.slope);
            }
        }
        if slopes.len() >= 2 {
            let n = slopes.len() as f64;
            let mean = slopes.iter().sum::<f64>() / n;
            let var = slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
            half_width = 2.0 * (var / n).sqrt();
        }
    }
    Ok(EstimateReport {
        kind: EstimateKind::HolderDirection,
        inputs: alloc::format!("{} realizations, direction e{}", fields.len(), axis + 1),
        scales,
        statistics: stats,
        estimate: fit.slope,
        half_width,
        r_squared: fit.r_squared,
        residual_max: fit.residual_max,
        passed: None,
    })
}

/// κ of the modulus of continuity: 1/α + 1/2 + ε, or 1/2 + ε for α = 2.
pub fn modulus_kappa(alpha: f64, eps: f64) -> f64 {
    if alpha >= 2.0 {
        0.5 + eps
    } else {
        1.0 / alpha + 0.5 + eps
    }
}

/// R(δ) = max |X(x) − X(y)| / (τ_E(x−y)|log τ_E(x−y)|^κ) over node pairs
/// with δ/2 < ‖x − y‖ ≤ δ and τ_E(x−y) < 1, for decreasing δ. Passes when
/// every R(δ_{k+1}) ≤ 1.2·max_{i≤k} R(δ_i).
pub fn modulus_ratio(field: &FieldSample, sys: &PolarSystem, kappa: f64, deltas: &[f64]) -> Result<EstimateReport> {
    let grid = &field.grid;
    let d = grid.dim();
    if sys.dim() != d {
        return Err(Error::Dimension { expected: d, got: sys.dim() });
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) || deltas.len() < 2 {
        return Err(precondition("δ values must be decreasing (at least two)"));
    }
    let shape = grid.shape();
    let steps: Vec<f64> = grid.axes().iter().map(|a| a.step()).collect();
    let mut stats = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        // lag vectors in the half-space (first nonzero component positive)
        let ranges: Vec<usize> = (0..d)
            .map(|j| if steps[j] > 0.0 { ((delta / steps[j]).floor() as usize).min(shape[j] - 1) } else { 0 })
            .collect();
        let mut best = 0.0f64;
        let mut pairs = 0usize;
        let mut lag = vec![0i64; d];
        let total: usize = ranges.iter().map(|r| 2 * r + 1).product();
        for code in 0..total {
            let mut c = code;
            for j in (0..d).rev() {
                let m = 2 * ranges[j] + 1;
                lag[j] = (c % m) as i64 - ranges[j] as i64;
                c /= m;
            }
            if !lag.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0) {
                continue;
            }
            let h: Vec<f64> = lag.iter().zip(&steps).map(|(&k, s)| k as f64 * s).collect();
            let len = crate::linalg::norm2(&h);
            if !(len > 0.5 * delta && len <= delta * (1.0 + 1e-12)) {
                continue;
            }
            let tau = sys.tau(&h)?;
            if !(tau < 1.0 && tau > 0.0) {
                continue;
            }
            let denom = tau * (-tau.ln()).powf(kappa);
            let mut m = 0.0f64;
            for i in 0..grid.len() {
                let idx = grid.multi_index(i);
                let mut ok = true;
                let mut target = vec![0usize; d];
                for j in 0..d {
                    let t = idx[j] as i64 + lag[j];
                    if t < 0 || t as usize >= shape[j] {
                        ok = false;
                        break;
                    }
                    target[j] = t as usize;
                }
                if ok {
                    m = m.max((field.values[grid.flat_index(&target)] - field.values[i]).abs());
                    pairs += 1;
                }
            }
            best = best.max(m / denom);
        }
        if pairs == 0 {
            return Err(Error::InsufficientData(alloc::format!("no node pairs at δ = {delta}")));
        }
        stats.push(best);
    }
    let mut passed = true;
    let mut running = stats[0];
    let mut worst = 0.0f64;
    for &r in &stats[1..] {
        if r > 1.2 * running {
            passed = false;
        }
        if running > 0.0 {
            worst = worst.max(r / running);
        }
        running = running.max(r);
    }
    Ok(EstimateReport {
        kind: EstimateKind::ModulusRatio,
        inputs: alloc::format!("κ = {kappa}"),
        scales: deltas.to_vec(),
        statistics: stats,
        estimate: worst,
        half_width: 0.0,
        r_squared: f64::NAN,
        residual_max: f64::NAN,
        passed: Some(passed),
    })
}

/// Kolmogorov survival function Q(λ) = 2Σ_{k≥1}(−1)^{k−1}e^{−2k²λ²}.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let t = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { t } else { -t };
        if t < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value (with the
/// small-sample correction λ = (√n_e + 0.12 + 0.11/√n_e)D).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("empty sample".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n && j < m {
        let v = if x[i] <= y[j] { x[i] } else { y[j] };
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let sq = ne.sqrt();
    Ok((d, kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)))
}

/// Realization index for pool `pool` (0 or 1) and replica `r`.
pub fn pool_index(pool: u64, r: u64) -> u64 {
    (pool << 40) | r
}

/// Compares {Σ a_i X(c^E x_i)} with {c^γ Σ a_i X(x_i)} (γ = `exponent`,
/// 1 for the scaling law) on independent realization pools, for 5 random
/// coefficient vectors. `simulate(points, index)` returns one realization
/// at `points`; pool A uses indices `pool_index(0, r)`, pool B
/// `pool_index(1, r)`. Passes when every p-value exceeds 0.01/5.
pub fn scaling_verify(
    simulate: &mut dyn FnMut(&[Vec<f64>], u64) -> Result<Vec<f64>>,
    e: &OperatorMatrix,
    c: f64,
    exponent: f64,
    points: &[Vec<f64>],
    n_real: usize,
    seed: u64,
) -> Result<EstimateReport> {
    if n_real < 200 {
        return Err(Error::InsufficientData(alloc::format!("{n_real} realizations, need at least 200")));
    }
    if !(c > 0.0) || points.is_empty() {
        return Err(precondition("c must be positive and points nonempty"));
    }
    let pc = e.power(c)?;
    let mapped: Vec<Vec<f64>> = points.iter().map(|x| pc.mul_vec(x)).collect();
    let mut rng = stream_rng(seed, stream::SCALING_COEFFICIENTS, 0);
    let coefs: Vec<Vec<f64>> =
        (0..5).map(|_| (0..points.len()).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let mut pool_a: Vec<Vec<f64>> = Vec::with_capacity(n_real);
    let mut pool_b: Vec<Vec<f64>> = Vec::with_capacity(n_real);
    for r in 0..n_real as u64 {
        pool_a.push(simulate(&mapped, pool_index(0, r))?);
        pool_b.push(simulate(points, pool_index(1, r))?);
    }
    let factor = c.powf(exponent);
    let mut pvals = Vec::with_capacity(5);
    for a in &coefs {
        let sa: Vec<f64> = pool_a.iter().map(|v| v.iter().zip(a).map(|(x, w)| x * w).sum()).collect();
        let sb: Vec<f64> = pool_b.iter().map(|v| factor * v.iter().zip(a).map(|(x, w)| x * w).sum::<f64>()).collect();
        pvals.push(ks_two_sample(&sa, &sb)?.1);
    }
    let min_p = pvals.iter().fold(1.0f64, |m, &p| m.min(p));
    Ok(EstimateReport {
        kind: EstimateKind::ScalingKs,
        inputs: alloc::format!("c = {c}, exponent {exponent}, {} points, {n_real} realizations", points.len()),
        scales: (0..5).map(|k| k as f64).collect(),
        statistics: pvals,
        estimate: min_p,
        half_width: 0.0,
        r_squared: f64::NAN,
        residual_max: f64::NAN,
        passed: Some(min_p > 0.01 / 5.0),
    })
}

/// Box-counting dimension of the graph of a field on a d ∈ {1, 2} grid.
/// The graph is mapped to the unit cube; for each ε (a dyadic fraction)
/// every closed domain cell contributes ⌊max/ε⌋ − ⌊min/ε⌋ + 1 boxes.
pub fn box_dimension(field: &FieldSample, eps_list: &[f64]) -> Result<EstimateReport> {
    let grid = &field.grid;
    let d = grid.dim();
    if d > 2 {
        return Err(precondition("box counting supports d ∈ {1, 2}"));
    }
    let shape = grid.shape();
    if shape.iter().any(|&c| c < 2) {
        return Err(precondition("every axis needs at least two nodes"));
    }
    let lo = field.values.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let hi = field.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let range = if hi > lo { hi - lo } else { 1.0 };
    let norm: Vec<f64> = field.values.iter().map(|v| (v - lo) / range).collect();
    let mut scales = Vec::new();
    let mut counts = Vec::new();
    for &eps in eps_list {
        if !(eps > 0.0 && eps <= 1.0) {
            continue;
        }
        // cells per axis and the node index range of each closed cell
        let cells: Vec<usize> = (0..d).map(|_| (1.0 / eps).round() as usize).collect();
        if cells.iter().zip(&shape).any(|(&c, &n)| c > n - 1) {
            continue;
        }
        let bounds = |j: usize, c: usize| -> (usize, usize) {
            let n = shape[j] - 1;
            let a = (c as f64 * eps * n as f64).floor() as usize;
            let b = (((c + 1) as f64 * eps * n as f64).ceil() as usize).min(n);
            (a, b)
        };
        let mut total = 0.0f64;
        let n_cells: usize = cells.iter().product();
        for cell in 0..n_cells {
            let (c0, c1) = if d == 1 { (cell, 0) } else { (cell / cells[1], cell % cells[1]) };
            let (a0, b0) = bounds(0, c0);
            let (a1, b1) = if d == 2 { bounds(1, c1) } else { (0, 0) };
            let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
            for i in a0..=b0 {
                for j in a1..=b1 {
                    let v = if d == 1 { norm[i] } else { norm[i * shape[1] + j] };
                    mn = mn.min(v);
                    mx = mx.max(v);
                }
            }
            total += ((mx / eps).floor() - (mn / eps).floor() + 1.0).max(1.0);
        }
        scales.push(eps);
        counts.push(total);
    }
    if scales.len() < 5 {
        return Err(Error::InsufficientData(alloc::format!("{} usable box sizes, need 5", scales.len())));
    }
    let lx: Vec<f64> = scales.iter().map(|e| -e.ln()).collect();
    let ly: Vec<f64> = counts.iter().map(|c| c.ln()).collect();
    let fit = ols(&lx, &ly)?;
    Ok(EstimateReport {
        kind: EstimateKind::BoxDimension,
        inputs: alloc::format!("{} nodes, d = {d}", grid.len()),
        scales,
        statistics: counts,
        estimate: fit.slope,
        half_width: 2.0 * fit.slope_stderr,
        r_squared: fit.r_squared,
        residual_max: fit.residual_max,
        passed: None,
    })
}

/// I.i.d. standard normal values on a grid (a field without regularity).
pub fn white_noise(grid: &GridSpec, seed: u64, index: u64) -> Result<FieldSample> {
    let mut rng = stream_rng(seed, stream::ESTIMATOR, index);
    let values = (0..grid.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let meta = FieldMeta {
        kind: FieldKind::WhiteNoise,
        alpha: 2.0,
        matrix: Matrix::identity(grid.dim()),
        psi: "none".into(),
        seed,
        realization: index,
        terms: 0,
        tail_variance: 0.0,
    };
    FieldSample::new(grid.clone(), values, meta)
}
