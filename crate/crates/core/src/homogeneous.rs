//! Homogeneous functions: ψ(c^A x) = c ψ(x) for a homogeneity operator A
//! (A = E^t on the spectral side, A = E for moving-average kernels).

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm2, Matrix};
use crate::operator_algebra::{BlockStructure, JordanBlock, OperatorMatrix};
use crate::polar::{gaussian_unit, PolarSystem};

#[derive(Clone, Debug)]
pub enum PsiKind {
    /// ‖x‖^H with A = I/H.
    EuclidPower { h: f64 },
    /// (Σ_j |⟨x, θ_j⟩|^{2/a_j})^{1/2}; rows of `thetas` are the θ_j.
    Diagonal { thetas: Matrix, exponents: Vec<f64> },
    /// τ_A(x).
    Radial { polar: Box<PolarSystem> },
}

#[derive(Clone, Debug)]
pub struct HomogeneousFunction {
    kind: PsiKind,
    op: OperatorMatrix,
}

impl HomogeneousFunction {
    /// ψ(x) = ‖x‖^H. `op` must equal I/H.
    pub fn euclid(h: f64, op: &OperatorMatrix) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(invalid(format!("Euclidean exponent must lie in (0, 1), got {h}")));
        }
        let d = op.dim();
        let target = Matrix::identity(d).scaled(1.0 / h);
        if op.entries().max_abs_diff(&target) > 1e-12 * (1.0 / h) {
            return Err(invalid(format!("euclid(H={h}) requires the homogeneity operator I/H")));
        }
        Ok(HomogeneousFunction { kind: PsiKind::EuclidPower { h }, op: op.clone() })
    }

    /// ψ(x) = ‖x‖^H together with its operator I/H in dimension d.
    pub fn euclid_in(h: f64, d: usize) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(invalid(format!("Euclidean exponent must lie in (0, 1), got {h}")));
        }
        let op = OperatorMatrix::with_positive_spectrum(Matrix::identity(d).scaled(1.0 / h))?;
        Self::euclid(h, &op)
    }

    /// Diagonal family for given θ_j (rows) and a_j. Its homogeneity
    /// operator A satisfies Aᵗθ_j = a_jθ_j, i.e. A = Θ⁻ᵀ D Θᵀ with Θ the
    /// matrix whose columns are the θ_j.
    pub fn diagonal(thetas: &Matrix, exponents: &[f64]) -> Result<Self> {
        let d = thetas.rows();
        if thetas.cols() != d || exponents.len() != d {
            return Err(Error::Dimension { expected: d, got: exponents.len() });
        }
        if let Some(a) = exponents.iter().find(|&&a| !(a > 1.0)) {
            return Err(Error::SpectrumTooSmall { min_real_part: *a });
        }
        let cols = thetas.transpose();
        let gram = thetas.mul(&cols);
        let scale: f64 = (0..d).map(|i| gram[(i, i)]).product();
        if !(gram.determinant().abs() > 1e-12 * scale) {
            return Err(Error::SingularBasis { condition: f64::INFINITY });
        }
        // A = Θ⁻ᵀ D Θᵀ = P D P⁻¹ with P = Θ⁻ᵀ
        let p = cols.inverse()?.transpose();
        let blocks = exponents.iter().map(|&a| JordanBlock::real(a, 1)).collect();
        let bs = BlockStructure::new(blocks, p)?;
        let op = OperatorMatrix::build_from_blocks(bs)?;
        Self::diagonal_with_operator(thetas, exponents, &op)
    }

    /// Diagonal family for an explicit operator; checks Aᵗθ_j = a_jθ_j.
    pub fn diagonal_with_operator(thetas: &Matrix, exponents: &[f64], op: &OperatorMatrix) -> Result<Self> {
        let d = op.dim();
        if thetas.rows() != d || thetas.cols() != d || exponents.len() != d {
            return Err(Error::Dimension { expected: d, got: thetas.rows() });
        }
        let at = op.entries().transpose();
        for j in 0..d {
            let t = thetas.row(j);
            let img = at.mul_vec(t);
            let resid: f64 = img.iter().zip(t).map(|(u, v)| (u - exponents[j] * v).powi(2)).sum::<f64>().sqrt();
            if resid > 1e-8 * norm2(t) * exponents[j] {
                return Err(invalid(format!(
                    "θ_{} is not an eigenvector of the transposed homogeneity operator (residual {resid:e})",
                    j + 1
                )));
            }
        }
        Ok(HomogeneousFunction {
            kind: PsiKind::Diagonal { thetas: thetas.clone(), exponents: exponents.to_vec() },
            op: op.clone(),
        })
    }

    /// Diagonal family built from the real 1-cells of a declared block
    /// structure of A: θ_j are the eigenvectors of Aᵗ.
    pub fn diagonal_from_operator(op: &OperatorMatrix) -> Result<Self> {
        let d = op.dim();
        let (thetas, exps) = if let Some(bs) = op.blocks() {
            if bs.blocks().iter().any(|b| b.size != 1 || !matches!(b.kind, crate::BlockKind::Real { .. })) {
                return Err(invalid("diagonal ψ needs a diagonalisable operator with real eigenvalues"));
            }
            // Aᵗ = P⁻ᵀ D Pᵀ: eigenvectors of Aᵗ are the rows of P⁻¹
            let pinv = bs.basis_change().inverse()?;
            let exps: Vec<f64> = bs.blocks().iter().map(|b| b.real_part()).collect();
            (pinv, exps)
        } else {
            let e = op.entries();
            let off = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).filter(|(i, j)| i != j);
            if off.clone().any(|(i, j)| e[(i, j)] != 0.0) {
                return Err(invalid("diagonal ψ needs θ_j: supply a θ file or a diagonal matrix"));
            }
            (Matrix::identity(d), (0..d).map(|i| e[(i, i)]).collect())
        };
        Self::diagonal_with_operator(&thetas, &exps, op)
    }

    /// ψ = τ_A.
    pub fn radial(polar: PolarSystem) -> Self {
        let op = polar.operator().clone();
        HomogeneousFunction { kind: PsiKind::Radial { polar: Box::new(polar) }, op }
    }

    pub fn kind(&self) -> &PsiKind {
        &self.kind
    }

    pub fn operator(&self) -> &OperatorMatrix {
        &self.op
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// Short identifier used in file metadata.
    pub fn id(&self) -> String {
        match &self.kind {
            PsiKind::EuclidPower { h } => format!("euclid(H={h})"),
            PsiKind::Diagonal { exponents, .. } => format!("diagonal(a={exponents:?})"),
            PsiKind::Radial { .. } => "radial".into(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        match &self.kind {
            PsiKind::EuclidPower { h } => Ok(norm2(x).powf(*h)),
            PsiKind::Diagonal { thetas, exponents } => {
                let mut s = 0.0;
                for (j, &a) in exponents.iter().enumerate() {
                    s += dot(x, thetas.row(j)).abs().powf(2.0 / a);
                }
                Ok(s.sqrt())
            }
            PsiKind::Radial { polar } => polar.tau(x),
        }
    }

    /// Maximum relative homogeneity defect |ψ(c^A x) − cψ(x)|/(cψ(x)) over
    /// `n` random pairs with c log-uniform in [0.1, 10] and x Gaussian.
    pub fn homogeneity_defect<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<f64> {
        let d = self.dim();
        let mut worst = 0.0f64;
        for _ in 0..n {
            let c = rng.random_range(0.1f64.ln()..10f64.ln()).exp();
            let mut x = gaussian_unit(d, rng);
            let r = rng.random_range(0.1f64..3.0);
            x.iter_mut().for_each(|v| *v *= r);
            let cx = self.op.power(c)?.mul_vec(&x);
            let lhs = self.eval(&cx)?;
            let rhs = c * self.eval(&x)?;
            worst = worst.max((lhs - rhs).abs() / rhs);
        }
        Ok(worst)
    }

    /// Mandatory check before use: defect below `tol` on `n` random pairs
    /// and strictly positive values on unit-sphere samples.
    pub fn validate<R: Rng + ?Sized>(&self, n: usize, tol: f64, rng: &mut R) -> Result<()> {
        let defect = self.homogeneity_defect(n, rng)?;
        if !(defect <= tol) {
            return Err(invalid(format!("ψ fails the homogeneity check: defect {defect:e} > {tol:e}")));
        }
        for _ in 0..n {
            let u = gaussian_unit(self.dim(), rng);
            let v = self.eval(&u)?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("ψ is not positive off the origin (value {v})")));
            }
        }
        Ok(())
    }
}

/// Result of [`admissibility_probe`]: per τ-decade maxima of
/// |φ(x+y) − φ(y)|/τ_E(x)^β.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibilityReport {
    pub beta: f64,
    /// (decade lower edge of τ_E(x), max ratio in that decade), coarse to fine.
    pub decades: Vec<(f64, f64)>,
    /// True when the finest decade does not exceed the coarsest by more than
    /// a factor 10 (a diagnostic, not a proof).
    pub plausible: bool,
}

/// Empirical sup of |φ(x+y) − φ(y)|/τ_E(x)^β over A ≤ ‖y‖ ≤ B and
/// τ_E(x) ∈ [1e-4, 1], binned by decade of τ_E(x). `sys` is the polar
/// system of φ's homogeneity operator E.
pub fn admissibility_probe<R: Rng + ?Sized>(
    phi: &HomogeneousFunction,
    sys: &PolarSystem,
    beta: f64,
    a: f64,
    b: f64,
    n: usize,
    rng: &mut R,
) -> Result<AdmissibilityReport> {
    if !(0.0 < a && a < b) {
        return Err(crate::error::precondition("need 0 < A < B"));
    }
    if !(beta > 1.0) {
        return Err(invalid("β must exceed 1"));
    }
    let d = phi.dim();
    let decades = 4;
    let mut best = vec![0.0f64; decades];
    for _ in 0..n {
        let mut y = gaussian_unit(d, rng);
        let ry = rng.random_range(a..=b);
        y.iter_mut().for_each(|v| *v *= ry);
        let u = gaussian_unit(d, rng);
        let theta = sys.ell(&u)?;
        let k = rng.random_range(0..decades);
        let tau = 10f64.powf(-(k as f64) - rng.random::<f64>());
        let x = sys.power_apply(tau, &theta)?;
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p + q).collect();
        let ratio = (phi.eval(&xy)? - phi.eval(&y)?).abs() / tau.powf(beta);
        best[k] = best[k].max(ratio);
    }
    let out: Vec<(f64, f64)> = best.iter().enumerate().map(|(k, &m)| (10f64.powi(-(k as i32) - 1), m)).collect();
    let plausible = out[decades - 1].1 <= 10.0 * out[0].1.max(1e-300);
    Ok(AdmissibilityReport { beta, decades: out, plausible })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn euclid_examples() {
        let psi = HomogeneousFunction::euclid_in(0.5, 2).unwrap();
        assert!((psi.eval(&[3.0, 4.0]).unwrap() - 5f64.sqrt()).abs() < 1e-15);
        assert_eq!(psi.eval(&[0.0, 0.0]).unwrap(), 0.0);
        let x = [0.3, -1.1];
        let cx = psi.operator().power(7.0).unwrap().mul_vec(&x);
        assert!((psi.eval(&cx).unwrap() / (7.0 * psi.eval(&x).unwrap()) - 1.0).abs() < 1e-10);
        let wrong = OperatorMatrix::diagonal(&[2.0, 3.0]).unwrap();
        assert!(HomogeneousFunction::euclid(0.5, &wrong).is_err());
    }

    #[test]
    fn diagonal_examples() {
        let psi = HomogeneousFunction::diagonal(&Matrix::identity(2), &[2.0, 3.0]).unwrap();
        assert!((psi.eval(&[1.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        for &t in &[0.01, 0.5, 7.0] {
            assert!((psi.eval(&[t, 0.0]).unwrap() - t.sqrt()).abs() < 1e-15);
        }
        let x = [0.4, -0.9];
        for &c in &[0.5, 2.0, 9.0] {
            let cx = psi.operator().power(c).unwrap().mul_vec(&x);
            assert!((psi.eval(&cx).unwrap() / (c * psi.eval(&x).unwrap()) - 1.0).abs() < 1e-8);
        }
        assert!(HomogeneousFunction::diagonal(&Matrix::from_rows(&[&[1.0, 0.0], &[2.0, 0.0]]), &[2.0, 3.0]).is_err());
    }

    #[test]
    fn diagonal_with_skew_basis_is_homogeneous() {
        let thetas = Matrix::from_rows(&[&[1.0, 0.3], &[-0.2, 1.0]]);
        let psi = HomogeneousFunction::diagonal(&thetas, &[1.5, 2.5]).unwrap();
        let mut rng = stream_rng(1, 99, 0);
        psi.validate(1000, 1e-6, &mut rng).unwrap();
        // the same operator read back through its block structure
        let again = HomogeneousFunction::diagonal_from_operator(psi.operator()).unwrap();
        let x = [0.7, 0.2];
        let (p, q) = (psi.eval(&x).unwrap(), again.eval(&x).unwrap());
        assert!(p > 0.0 && q > 0.0);
        again.validate(200, 1e-6, &mut rng).unwrap();
    }

    #[test]
    fn radial_is_homogeneous_and_proportional_to_euclid() {
        let op = OperatorMatrix::with_positive_spectrum(Matrix::identity(2).scaled(2.0)).unwrap();
        let psi = HomogeneousFunction::radial(PolarSystem::new(&op).unwrap());
        let eu = HomogeneousFunction::euclid(0.5, &op).unwrap();
        let mut rng = stream_rng(2, 99, 0);
        psi.validate(200, 1e-6, &mut rng).unwrap();
        assert_eq!(psi.eval(&[0.0, 0.0]).unwrap(), 0.0);
        let r0 = psi.eval(&[1.0, 0.0]).unwrap() / eu.eval(&[1.0, 0.0]).unwrap();
        for _ in 0..100 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let r = psi.eval(&x).unwrap() / eu.eval(&x).unwrap();
            assert!((r / r0 - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn every_family_passes_the_validator() {
        let mut rng = stream_rng(3, 99, 0);
        let e = OperatorMatrix::diagonal(&[2.0, 3.0]).unwrap();
        let fams = [
            HomogeneousFunction::euclid_in(0.4, 3).unwrap(),
            HomogeneousFunction::diagonal_from_operator(&e.transpose()).unwrap(),
            HomogeneousFunction::radial(PolarSystem::new(&e.transpose()).unwrap()),
        ];
        for f in &fams {
            f.validate(1000, 1e-6, &mut rng).unwrap();
        }
    }

    #[test]
    fn admissibility_probe_reports() {
        let op = OperatorMatrix::with_positive_spectrum(Matrix::identity(2).scaled(2.0)).unwrap();
        let sys = PolarSystem::new(&op).unwrap();
        let phi = HomogeneousFunction::radial(sys.clone());
        let mut rng = stream_rng(4, 99, 0);
        let rep = admissibility_probe(&phi, &sys, 1.2, 0.5, 1.0, 400, &mut rng).unwrap();
        assert_eq!(rep.decades.len(), 4);
        assert!(rep.decades.iter().all(|d| d.1.is_finite()));
        assert!(admissibility_probe(&phi, &sys, 1.2, 1.0, 0.5, 10, &mut rng).is_err());
    }
}
