//! Symmetric α-stable primitives.
//!
//! Conventions: the standard SαS law has characteristic function
//! exp(−|z|^α); the complex multipliers g have independent real and
//! imaginary parts, each centred normal with variance ½, so E|g|² = 1.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{invalid, precondition, Result};
use crate::quadrature::adaptive_gk15;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 2.0 {
        Ok(())
    } else {
        Err(invalid(alpha_message(alpha)))
    }
}

fn alpha_message(alpha: f64) -> alloc::string::String {
    alloc::format!("stability index must lie in (0, 2), got {alpha}")
}

/// c_α = (1/2π) ∫₀^π |cos x|^α dx = Γ((α+1)/2) / (2√π Γ(α/2 + 1)).
pub fn cos_moment(alpha: f64) -> f64 {
    libm::tgamma(0.5 * (alpha + 1.0)) / (2.0 * PI.sqrt() * libm::tgamma(0.5 * alpha + 1.0))
}

/// c_α by adaptive quadrature (split at the zero of cos).
pub fn cos_moment_quadrature(alpha: f64) -> f64 {
    let f = |x: f64| x.cos().abs().powf(alpha);
    let (a, _) = adaptive_gk15(f, 0.0, 0.5 * PI, 1e-14, 1e-13);
    let (b, _) = adaptive_gk15(f, 0.5 * PI, PI, 1e-14, 1e-13);
    (a + b) / (2.0 * PI)
}

/// ∫₀^∞ sin(x)/x^α dx = Γ(1−α) cos(πα/2), written as
/// Γ(2−α) sin(πε/2)/ε with ε = 1 − α so that α = 1 gives π/2.
pub fn sine_integral(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let eps = 1.0 - alpha;
    let ratio = if eps.abs() < 1e-6 {
        let z = 0.5 * PI * eps;
        0.5 * PI * (1.0 - z * z / 6.0)
    } else {
        (0.5 * PI * eps).sin() / eps
    };
    Ok(libm::tgamma(2.0 - alpha) * ratio)
}

/// The same integral by quadrature: half-period integrals over [kπ, (k+1)π]
/// form an alternating series, summed with repeated averaging of partial
/// sums (Euler transform).
pub fn sine_integral_quadrature(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let f = |x: f64| if x == 0.0 { 0.0 } else { x.sin() / x.powf(alpha) };
    let (head, _) = adaptive_gk15(f, 0.0, PI, 1e-15, 1e-14);
    let terms = 60;
    let mut partial = Vec::with_capacity(terms);
    let mut s = head;
    for k in 1..=terms {
        let (v, _) = adaptive_gk15(f, k as f64 * PI, (k + 1) as f64 * PI, 1e-16, 1e-14);
        s += v;
        partial.push(s);
    }
    for _ in 0..30 {
        partial = partial.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    Ok(partial[partial.len() - 1])
}

/// E|Re g|^α for Re g ~ N(0, ½): Γ((α+1)/2)/√π.
pub fn re_gaussian_moment(alpha: f64) -> f64 {
    libm::tgamma(0.5 * (alpha + 1.0)) / PI.sqrt()
}

/// E|γ|^α for a standard normal γ: 2^{α/2} Γ((α+1)/2)/√π.
pub fn std_gaussian_moment(alpha: f64) -> f64 {
    2f64.powf(0.5 * alpha) * re_gaussian_moment(alpha)
}

/// The LePage normalising constant
/// C_α = E(|Re g|^α)^{−1/α} c_α^{1/α} (∫₀^∞ sin x/x^α dx)^{−1/α}.
pub fn c_alpha(alpha: f64) -> Result<f64> {
    let s = sine_integral(alpha)?;
    Ok((cos_moment(alpha) / (re_gaussian_moment(alpha) * s)).powf(1.0 / alpha))
}

/// Constant C'_α of the real-measure series C'_α Σ T_n^{−1/α} h_n γ_n
/// (standard normal γ_n): the sum has SαS scale (E|h|^α)^{1/α} exactly when
/// C'_α^α · E|γ|^α · ∫₀^∞ sin x/x^α dx = 1.
pub fn ma_constant(alpha: f64) -> Result<f64> {
    let s = sine_integral(alpha)?;
    Ok((std_gaussian_moment(alpha) * s).powf(-1.0 / alpha))
}

/// Stability index with its derived constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StableParams {
    pub alpha: f64,
    /// C_α of the LePage series.
    pub c_alpha_const: f64,
    /// c_α = (1/2π)∫₀^π|cos x|^α dx.
    pub cos_moment: f64,
    /// E|Re g₁|^α.
    pub re_g_moment: f64,
    /// E|g₁|² (fixed to 1 by the multiplier convention).
    pub g_second_moment: f64,
}

impl StableParams {
    pub fn new(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(StableParams {
            alpha,
            c_alpha_const: c_alpha(alpha)?,
            cos_moment: cos_moment(alpha),
            re_g_moment: re_gaussian_moment(alpha),
            g_second_moment: 1.0,
        })
    }
}

/// One standard SαS draw (characteristic function exp(−|z|^α)) by the
/// Chambers–Mallows–Stuck transform; α = 2 gives N(0, 2).
pub fn sample_sas<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let v = PI * (rng.random::<f64>() - 0.5);
    if alpha == 1.0 {
        return v.tan();
    }
    let w: f64 = Exp1.sample(rng);
    let a = (alpha * v).sin() / v.cos().powf(1.0 / alpha);
    let b = ((1.0 - alpha) * v).cos() / w;
    a * b.powf((1.0 - alpha) / alpha)
}

/// Probability levels stored in a quantile table: k/1000, k = 1..=999.
pub const QUANTILE_LEVELS: usize = 999;

/// Empirical quantiles of the standard SαS law from a seeded CMS sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SasQuantileTable {
    pub alpha: f64,
    pub samples: u64,
    pub seed: u64,
    quantiles: Vec<f64>,
}

impl SasQuantileTable {
    /// Draws `n` samples from stream (seed, STABLE_QUANTILES, 0) and keeps
    /// the quantiles at levels k/1000.
    pub fn generate(alpha: f64, n: usize, seed: u64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(invalid(alpha_message(alpha)));
        }
        if n < 10_000 {
            return Err(precondition("quantile tables need at least 10⁴ samples"));
        }
        let mut rng = crate::rng::stream_rng(seed, crate::rng::stream::STABLE_QUANTILES, 0);
        let mut xs: Vec<f64> = (0..n).map(|_| sample_sas(alpha, &mut rng)).collect();
        xs.sort_unstable_by(f64::total_cmp);
        let quantiles = (1..=QUANTILE_LEVELS)
            .map(|k| {
                let pos = k as f64 / 1000.0 * (n - 1) as f64;
                let i = pos.floor() as usize;
                let f = pos - i as f64;
                xs[i] * (1.0 - f) + xs[(i + 1).min(n - 1)] * f
            })
            .collect();
        Ok(SasQuantileTable { alpha, samples: n as u64, seed, quantiles })
    }

    pub fn from_parts(alpha: f64, samples: u64, seed: u64, quantiles: Vec<f64>) -> Result<Self> {
        if quantiles.len() != QUANTILE_LEVELS || quantiles.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid("quantile table must hold 999 non-decreasing values"));
        }
        Ok(SasQuantileTable { alpha, samples, seed, quantiles })
    }

    pub fn levels(&self) -> &[f64] {
        &self.quantiles
    }

    /// (quantile, standard error) at probability p ∈ (0.01, 0.99). The
    /// standard error is √(p(1−p)/n)/f̂ with the density f̂ from neighbouring
    /// table levels.
    pub fn quantile(&self, p: f64) -> Result<(f64, f64)> {
        if !(p > 0.01 && p < 0.99) {
            return Err(precondition(alloc::format!("probability must lie in (0.01, 0.99), got {p}")));
        }
        let pos = p * 1000.0 - 1.0;
        let i = (pos.floor() as usize).min(QUANTILE_LEVELS - 2);
        let f = pos - i as f64;
        let q = self.quantiles[i] * (1.0 - f) + self.quantiles[i + 1] * f;
        let lo = self.quantiles[i.saturating_sub(1)];
        let hi = self.quantiles[(i + 2).min(QUANTILE_LEVELS - 1)];
        let width = ((i + 2).min(QUANTILE_LEVELS - 1) - i.saturating_sub(1)) as f64 / 1000.0;
        let dens = width / (hi - lo).max(1e-300);
        let se = (p * (1.0 - p) / self.samples as f64).sqrt() / dens;
        Ok((q, se))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    /// SαS distribution function by Fourier inversion,
    /// F(x) = ½ + (1/π)∫₀^∞ sin(xt) e^{−t^α}/t dt.
    fn sas_cdf(alpha: f64, x: f64) -> f64 {
        let f = |t: f64| if t == 0.0 { x } else { (x * t).sin() * (-t.powf(alpha)).exp() / t };
        let top = 40f64.powf(1.0 / alpha);
        let pieces = 200;
        let mut s = 0.0;
        for k in 0..pieces {
            let (a, b) = (top * k as f64 / pieces as f64, top * (k + 1) as f64 / pieces as f64);
            s += adaptive_gk15(f, a, b, 1e-15, 1e-13).0;
        }
        0.5 + s / PI
    }

    fn sas_quantile_inversion(alpha: f64, p: f64) -> f64 {
        let (mut lo, mut hi) = (-1e3, 1e3);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if sas_cdf(alpha, mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn classical_values_at_alpha_one() {
        assert!((sine_integral(1.0).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!((cos_moment(1.0) - 1.0 / PI).abs() < 1e-15);
        assert!((cos_moment_quadrature(1.0) - 1.0 / PI).abs() < 1e-12);
    }

    #[test]
    fn closed_forms_agree_with_quadrature() {
        for &a in &[0.5, 0.8, 1.0, 1.2, 1.5, 1.8] {
            let (c, q) = (sine_integral(a).unwrap(), sine_integral_quadrature(a).unwrap());
            assert!((c / q - 1.0).abs() < 1e-6, "α={a}: {c} vs {q}");
            assert!((cos_moment(a) / cos_moment_quadrature(a) - 1.0).abs() < 1e-10);
        }
        // continuity through α = 1
        let near = sine_integral(1.0 + 1e-7).unwrap();
        assert!((near - PI / 2.0).abs() < 1e-6);
    }

    #[test]
    fn gaussian_moment_matches_monte_carlo() {
        let mut rng = stream_rng(7, 99, 0);
        let a = 1.5;
        let n = 400_000;
        let mut s = 0.0;
        for _ in 0..n {
            let g: f64 = rand_distr::StandardNormal.sample(&mut rng);
            s += (g / 2f64.sqrt()).abs().powf(a);
        }
        assert!((s / n as f64 / re_gaussian_moment(a) - 1.0).abs() < 0.01);
    }

    #[test]
    fn constants_are_finite_on_grid() {
        let mut a = 0.2;
        while a <= 1.95 + 1e-12 {
            let c = c_alpha(a).unwrap();
            assert!(c.is_finite() && c > 0.0, "α={a}");
            assert!(ma_constant(a).unwrap() > 0.0);
            a += 0.05;
        }
        assert!(c_alpha(2.0).is_err() && c_alpha(0.0).is_err());
    }

    #[test]
    fn cms_quantiles_match_fourier_inversion() {
        for &a in &[1.2, 1.5] {
            let t = SasQuantileTable::generate(a, 400_000, 3).unwrap();
            for &p in &[0.1, 0.25, 0.75, 0.9] {
                let (q, se) = t.quantile(p).unwrap();
                let exact = sas_quantile_inversion(a, p);
                assert!((q - exact).abs() < 4.0 * se, "α={a} p={p}: {q} vs {exact} ± {se}");
            }
        }
    }

    #[test]
    fn quantile_oracle_examples() {
        let t = SasQuantileTable::generate(1.0, 1_000_000, 1).unwrap();
        let (q, se) = t.quantile(0.75).unwrap();
        assert!((q - 1.0).abs() < 4.0 * se && se < 0.01);
        assert!(t.quantile(0.5).unwrap().0.abs() < 0.01);
        // α = 2 is N(0, 2): upper quartile √2·0.6744897501960817
        let t = SasQuantileTable::generate(2.0, 1_000_000, 1).unwrap();
        let q = t.quantile(0.75).unwrap().0;
        assert!((q / (2f64.sqrt() * 0.674_489_750_196_081_7) - 1.0).abs() < 0.01);
        assert!(t.quantile(0.005).is_err());
    }

    #[test]
    fn lepage_constant_gives_unit_scale() {
        // A unit-modulus kernel has scale c_α^{1/α}.
        let a = 1.5;
        let c = c_alpha(a).unwrap();
        let mut rng = stream_rng(11, 99, 0);
        let mut vals = Vec::new();
        for _ in 0..20_000 {
            let mut t = 0.0;
            let mut s = 0.0;
            for _ in 0..2000 {
                t += <Exp1 as Distribution<f64>>::sample(&Exp1, &mut rng);
                let g: f64 = rand_distr::StandardNormal.sample(&mut rng);
                s += t.powf(-1.0 / a) * g / 2f64.sqrt();
            }
            vals.push(c * s);
        }
        vals.sort_unstable_by(f64::total_cmp);
        let q75 = vals[15_000];
        let scale = cos_moment(a).powf(1.0 / a);
        let exact = scale * sas_quantile_inversion(a, 0.75);
        assert!((q75 / exact - 1.0).abs() < 0.05, "{q75} vs {exact}");
    }

    #[test]
    fn scaling_closure_of_quantiles() {
        let t = SasQuantileTable::generate(1.5, 400_000, 5).unwrap();
        let mut rng = stream_rng(6, 99, 0);
        for &a in &[0.5, 3.0] {
            let mut xs: Vec<f64> = (0..200_000).map(|_| a * sample_sas(1.5, &mut rng)).collect();
            xs.sort_unstable_by(f64::total_cmp);
            for &p in &[0.1, 0.25, 0.75, 0.9] {
                let emp = xs[(p * xs.len() as f64) as usize];
                assert!((emp / (a * t.quantile(p).unwrap().0) - 1.0).abs() < 0.02);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn lepage_constant_is_positive_and_continuous(a in 0.2f64..1.95) {
            let c = c_alpha(a).unwrap();
            let c2 = c_alpha(a + 1e-6).unwrap();
            prop_assert!(c > 0.0 && c.is_finite());
            prop_assert!((c2 / c - 1.0).abs() < 1e-4);
        }
    }
}
