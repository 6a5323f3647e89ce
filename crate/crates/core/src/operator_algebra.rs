//! Scaling matrices E, their powers t^E = exp(E log t), and Jordan-structured
//! constructors.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::E as EULER;

use crate::error::{invalid, precondition, Error, Result};
use crate::linalg::{expm, Matrix};

/// Largest acceptable 2-norm condition number of a basis change.
pub const MAX_BASIS_CONDITION: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BlockKind {
    /// Real eigenvalue λ.
    Real { lambda: f64 },
    /// Complex pair a ± ib, b ≠ 0.
    Complex { a: f64, b: f64 },
}

/// One Jordan block: a real cell of size l, or a complex pair block of real
/// size 2l built from Λ = [[a, −b], [b, a]].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JordanBlock {
    pub kind: BlockKind,
    pub size: usize,
}

impl JordanBlock {
    pub fn real(lambda: f64, size: usize) -> Self {
        JordanBlock { kind: BlockKind::Real { lambda }, size }
    }

    pub fn complex(a: f64, b: f64, size: usize) -> Self {
        JordanBlock { kind: BlockKind::Complex { a, b }, size }
    }

    pub fn real_part(&self) -> f64 {
        match self.kind {
            BlockKind::Real { lambda } => lambda,
            BlockKind::Complex { a, .. } => a,
        }
    }

    /// Real dimension of the block.
    pub fn dim(&self) -> usize {
        match self.kind {
            BlockKind::Real { .. } => self.size,
            BlockKind::Complex { .. } => 2 * self.size,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(invalid("Jordan block of size 0"));
        }
        let ok = match self.kind {
            BlockKind::Real { lambda } => lambda.is_finite(),
            BlockKind::Complex { a, b } => a.is_finite() && b.is_finite() && b != 0.0,
        };
        if !ok {
            return Err(invalid(format!("malformed Jordan block {:?}", self)));
        }
        Ok(())
    }

    /// The block matrix J. Ones (or I₂ blocks) sit on the subdiagonal, so
    /// that t^J is lower triangular: for a real cell of size 2,
    /// t^J = t^λ [[1, 0], [log t, 1]].
    pub fn matrix(&self) -> Matrix {
        let n = self.dim();
        let mut j = Matrix::zeros(n, n);
        match self.kind {
            BlockKind::Real { lambda } => {
                for i in 0..self.size {
                    j[(i, i)] = lambda;
                    if i > 0 {
                        j[(i, i - 1)] = 1.0;
                    }
                }
            }
            BlockKind::Complex { a, b } => {
                for k in 0..self.size {
                    let o = 2 * k;
                    j[(o, o)] = a;
                    j[(o, o + 1)] = -b;
                    j[(o + 1, o)] = b;
                    j[(o + 1, o + 1)] = a;
                    if k > 0 {
                        j[(o, o - 2)] = 1.0;
                        j[(o + 1, o - 1)] = 1.0;
                    }
                }
            }
        }
        j
    }

    /// Eigenvalues with multiplicity as (re, im) pairs.
    fn eigenvalues(&self) -> Vec<(f64, f64)> {
        match self.kind {
            BlockKind::Real { lambda } => (0..self.size).map(|_| (lambda, 0.0)).collect(),
            BlockKind::Complex { a, b } => {
                (0..self.size).flat_map(|_| [(a, -b.abs()), (a, b.abs())]).collect()
            }
        }
    }
}

/// Declared Jordan data: E = P diag(J_1, …, J_m) P⁻¹, blocks sorted by
/// increasing real part.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockStructure {
    blocks: Vec<JordanBlock>,
    basis_change: Matrix,
    offsets: Vec<usize>,
}

impl BlockStructure {
    /// Validates the blocks and the basis change; reorders blocks (and the
    /// matching columns of P) by increasing real part.
    pub fn new(blocks: Vec<JordanBlock>, basis_change: Matrix) -> Result<Self> {
        if blocks.is_empty() {
            return Err(invalid("no Jordan blocks given"));
        }
        for b in &blocks {
            b.validate()?;
        }
        let d: usize = blocks.iter().map(|b| b.dim()).sum();
        if !basis_change.is_square() || basis_change.rows() != d {
            return Err(Error::Dimension { expected: d, got: basis_change.rows() });
        }
        let cond = basis_change.condition_number();
        if !(cond < MAX_BASIS_CONDITION) {
            return Err(Error::SingularBasis { condition: cond });
        }

        let mut start = Vec::with_capacity(blocks.len());
        let mut acc = 0;
        for b in &blocks {
            start.push(acc);
            acc += b.dim();
        }
        let mut order: Vec<usize> = (0..blocks.len()).collect();
        order.sort_by(|&i, &j| {
            blocks[i].real_part().partial_cmp(&blocks[j].real_part()).unwrap_or(core::cmp::Ordering::Equal)
        });
        let mut p = Matrix::zeros(d, d);
        let mut sorted = Vec::with_capacity(blocks.len());
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut col = 0;
        for &k in &order {
            let b = blocks[k];
            offsets.push(col);
            for c in 0..b.dim() {
                for r in 0..d {
                    p[(r, col + c)] = basis_change[(r, start[k] + c)];
                }
            }
            col += b.dim();
            sorted.push(b);
        }
        Ok(BlockStructure { blocks: sorted, basis_change: p, offsets })
    }

    pub fn blocks(&self) -> &[JordanBlock] {
        &self.blocks
    }

    pub fn basis_change(&self) -> &Matrix {
        &self.basis_change
    }

    pub fn dim(&self) -> usize {
        self.basis_change.rows()
    }

    /// l = max_j l_j.
    pub fn max_cell_size(&self) -> usize {
        self.blocks.iter().map(|b| b.size).max().unwrap_or(1)
    }

    /// p_{j0,j} = max_{j0 ≤ k ≤ j} l_k (zero-based, inclusive).
    pub fn p_index(&self, j0: usize, j: usize) -> usize {
        self.blocks[j0..=j].iter().map(|b| b.size).max().unwrap_or(1)
    }

    pub fn block_diagonal(&self) -> Matrix {
        let d = self.dim();
        let mut m = Matrix::zeros(d, d);
        for (b, &o) in self.blocks.iter().zip(&self.offsets) {
            let j = b.matrix();
            for r in 0..b.dim() {
                for c in 0..b.dim() {
                    m[(o + r, o + c)] = j[(r, c)];
                }
            }
        }
        m
    }

    /// P diag(J) P⁻¹.
    pub fn reconstruct(&self) -> Result<Matrix> {
        let pinv = self.basis_change.inverse()?;
        Ok(self.basis_change.mul(&self.block_diagonal()).mul(&pinv))
    }

    /// Columns of P spanning W_j, as a d × dim_j matrix.
    pub fn subspace_basis(&self, j: usize) -> Matrix {
        let b = self.blocks[j];
        let d = self.dim();
        let mut m = Matrix::zeros(d, b.dim());
        for r in 0..d {
            for c in 0..b.dim() {
                m[(r, c)] = self.basis_change[(r, self.offsets[j] + c)];
            }
        }
        m
    }

    /// Basis of ⊕_{k=j0}^{j} W_k.
    pub fn direct_sum_basis(&self, j0: usize, j: usize) -> Matrix {
        let d = self.dim();
        let cols: usize = self.blocks[j0..=j].iter().map(|b| b.dim()).sum();
        let first = self.offsets[j0];
        let mut m = Matrix::zeros(d, cols);
        for r in 0..d {
            for c in 0..cols {
                m[(r, c)] = self.basis_change[(r, first + c)];
            }
        }
        m
    }

    /// Coordinate projection onto ⊕_{k=j0}^{j} W_k along the other blocks:
    /// P D P⁻¹ with D selecting the block coordinates.
    pub fn projector(&self, j0: usize, j: usize) -> Result<Matrix> {
        let d = self.dim();
        let lo = self.offsets[j0];
        let hi = self.offsets[j] + self.blocks[j].dim();
        let mut sel = Matrix::zeros(d, d);
        for i in lo..hi {
            sel[(i, i)] = 1.0;
        }
        let pinv = self.basis_change.inverse()?;
        Ok(self.basis_change.mul(&sel).mul(&pinv))
    }
}

/// The scaling matrix E together with its spectral metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    entries: Matrix,
    eigenvalues: Vec<(f64, f64)>,
    eigen_real_parts: Vec<f64>,
    trace_q: f64,
    blocks: Option<BlockStructure>,
}

impl OperatorMatrix {
    /// Ingests a raw matrix; only eigenvalue real parts are computed.
    /// Rejects matrices with min_j a_j ≤ 1.
    pub fn from_matrix(entries: Matrix) -> Result<Self> {
        let op = Self::with_positive_spectrum(entries)?;
        op.check_scaling_condition()?;
        Ok(op)
    }

    /// Like [`OperatorMatrix::from_matrix`] but only requires positive real
    /// parts. This is what the polar-coordinate machinery needs; simulators
    /// require the stronger condition.
    pub fn with_positive_spectrum(entries: Matrix) -> Result<Self> {
        if !entries.is_square() || entries.rows() == 0 {
            return Err(invalid("scaling matrix must be square and nonempty"));
        }
        if !entries.is_finite() {
            return Err(invalid("scaling matrix has non-finite entries"));
        }
        let eigenvalues = entries.eigenvalues()?;
        Self::assemble(entries, eigenvalues, None)
    }

    fn assemble(entries: Matrix, mut eigenvalues: Vec<(f64, f64)>, blocks: Option<BlockStructure>) -> Result<Self> {
        eigenvalues.sort_by(|x, y| x.partial_cmp(y).unwrap_or(core::cmp::Ordering::Equal));
        let eigen_real_parts: Vec<f64> = eigenvalues.iter().map(|e| e.0).collect();
        if let Some(&a1) = eigen_real_parts.first() {
            if !(a1 > 0.0) {
                return Err(Error::SpectrumTooSmall { min_real_part: a1 });
            }
        }
        let trace_q = entries.trace();
        Ok(OperatorMatrix { entries, eigenvalues, eigen_real_parts, trace_q, blocks })
    }

    fn check_scaling_condition(&self) -> Result<()> {
        let a1 = self.a_min();
        if !(a1 > 1.0) {
            return Err(Error::SpectrumTooSmall { min_real_part: a1 });
        }
        Ok(())
    }

    /// E = P diag(J_j) P⁻¹ from declared Jordan data.
    pub fn build_from_blocks(blocks: BlockStructure) -> Result<Self> {
        for b in blocks.blocks() {
            if !(b.real_part() > 1.0) {
                return Err(Error::SpectrumTooSmall { min_real_part: b.real_part() });
            }
        }
        let entries = blocks.reconstruct()?;
        let eigenvalues = blocks.blocks().iter().flat_map(|b| b.eigenvalues()).collect();
        Self::assemble(entries, eigenvalues, Some(blocks))
    }

    /// diag(a_1, …, a_d).
    pub fn diagonal(a: &[f64]) -> Result<Self> {
        let blocks = a.iter().map(|&v| JordanBlock::real(v, 1)).collect();
        Self::build_from_blocks(BlockStructure::new(blocks, Matrix::identity(a.len()))?)
    }

    pub fn dim(&self) -> usize {
        self.entries.rows()
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    /// Eigenvalues (re, im) sorted by real part.
    pub fn eigenvalues(&self) -> &[(f64, f64)] {
        &self.eigenvalues
    }

    /// a_1 ≤ … ≤ a_d with multiplicity.
    pub fn eigen_real_parts(&self) -> &[f64] {
        &self.eigen_real_parts
    }

    /// H_j = 1/a_j, so H_1 ≥ … ≥ H_d.
    pub fn holder_indices(&self) -> Vec<f64> {
        self.eigen_real_parts.iter().map(|a| 1.0 / a).collect()
    }

    pub fn a_min(&self) -> f64 {
        self.eigen_real_parts[0]
    }

    pub fn a_max(&self) -> f64 {
        *self.eigen_real_parts.last().unwrap()
    }

    /// q = trace(E).
    pub fn trace(&self) -> f64 {
        self.trace_q
    }

    pub fn blocks(&self) -> Option<&BlockStructure> {
        self.blocks.as_ref()
    }

    /// Largest Jordan cell size when declared, 1 for a diagonalizable raw
    /// matrix with distinct eigenvalues, otherwise the eigenvalue
    /// multiplicity as a conservative stand-in.
    pub fn max_cell_size(&self) -> usize {
        match &self.blocks {
            Some(b) => b.max_cell_size(),
            None => {
                let mut best = 1;
                for e in &self.eigenvalues {
                    let m = self
                        .eigenvalues
                        .iter()
                        .filter(|f| (f.0 - e.0).abs() < 1e-6 && (f.1 - e.1).abs() < 1e-6)
                        .count();
                    best = best.max(m);
                }
                best
            }
        }
    }

    /// E^t with the same spectrum. Declared block data is not carried over.
    pub fn transpose(&self) -> OperatorMatrix {
        OperatorMatrix {
            entries: self.entries.transpose(),
            eigenvalues: self.eigenvalues.clone(),
            eigen_real_parts: self.eigen_real_parts.clone(),
            trace_q: self.trace_q,
            blocks: None,
        }
    }

    /// E/H style rescaling s·E.
    pub fn scaled(&self, s: f64) -> Result<OperatorMatrix> {
        if !(s > 0.0) {
            return Err(invalid("scale factor must be positive"));
        }
        let entries = self.entries.scaled(s);
        let eigenvalues = self.eigenvalues.iter().map(|&(r, i)| (r * s, i * s)).collect();
        Self::assemble(entries, eigenvalues, None)
    }

    /// exp(uE).
    pub fn exp_scaled(&self, u: f64) -> Result<Matrix> {
        expm(&self.entries.scaled(u))
    }

    /// t^E.
    pub fn power(&self, t: f64) -> Result<Matrix> {
        mat_power(self, t)
    }
}

/// t^E = exp(E log t) by scaling and squaring.
pub fn mat_power(e: &OperatorMatrix, t: f64) -> Result<Matrix> {
    if !t.is_finite() {
        return Err(Error::Range(format!("t = {t} is not finite")));
    }
    if !(t > 0.0) {
        return Err(precondition(format!("t must be positive, got {t}")));
    }
    e.exp_scaled(t.ln())
}

/// One row of a Jordan power-norm check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JordanNormEntry {
    pub t: f64,
    /// ‖t^J‖₂.
    pub norm: f64,
    /// t^a.
    pub lower: f64,
    /// √(2l)·e·t^a|log t|^{l−1}.
    pub upper: f64,
    /// ‖t^J‖₂/t^a − 1, nonnegative when the lower bound holds.
    pub lower_margin: f64,
    /// √(2l)·e·|log t|^{l−1} − ‖t^J‖₂/t^a, nonnegative when the upper bound holds.
    pub upper_margin: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JordanNormReport {
    pub block: JordanBlock,
    pub entries: Vec<JordanNormEntry>,
}

impl JordanNormReport {
    pub fn all_hold(&self) -> bool {
        self.entries.iter().all(|e| e.holds)
    }
}

/// Checks t^a ≤ ‖t^J‖₂ ≤ √(2l)·e·t^a|log t|^{l−1} for t outside (e⁻¹, e).
///
/// Since aI commutes with J, t^J = t^a·t^{J−aI}; the inequalities are
/// evaluated in the normalized form 1 ≤ ‖t^{J−aI}‖₂ ≤ √(2l)·e·|log t|^{l−1}
/// with additive slack `slack`, which keeps the comparison meaningful when
/// t^a is astronomically large.
pub fn jordan_norm_bounds_check(block: &JordanBlock, t_grid: &[f64], slack: f64) -> Result<JordanNormReport> {
    block.validate()?;
    let a = block.real_part();
    let l = block.size as i32;
    let j = block.matrix();
    let shifted = j.sub(&Matrix::identity(j.rows()).scaled(a));
    let mut entries = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        if !(t > 0.0) || !t.is_finite() {
            return Err(precondition(format!("t = {t} must be positive and finite")));
        }
        let lt = t.ln();
        if lt.abs() < 1.0 - 1e-12 {
            return Err(precondition(format!("t = {t} lies inside the excluded interval (1/e, e)")));
        }
        let rel = expm(&shifted.scaled(lt))?.spectral_norm();
        let upper_rel = (2.0 * l as f64).sqrt() * EULER * lt.abs().powi(l - 1);
        let ta = (a * lt).exp();
        let lower_margin = rel - 1.0;
        let upper_margin = upper_rel - rel;
        entries.push(JordanNormEntry {
            t,
            norm: ta * rel,
            lower: ta,
            upper: ta * upper_rel,
            lower_margin,
            upper_margin,
            holds: lower_margin >= -slack && upper_margin >= -slack,
        });
    }
    Ok(JordanNormReport { block: *block, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op2(rows: &[&[f64]]) -> Result<OperatorMatrix> {
        OperatorMatrix::from_matrix(Matrix::from_rows(rows))
    }

    #[test]
    fn power_of_scaled_identity() {
        let e = op2(&[&[2.0, 0.0], &[0.0, 2.0]]).unwrap();
        let p = mat_power(&e, 4.0).unwrap();
        assert!(p.max_abs_diff(&Matrix::diagonal(&[16.0, 16.0])) < 1e-12);
    }

    #[test]
    fn power_of_jordan_cell_is_lower_triangular() {
        let bs = BlockStructure::new(alloc::vec![JordanBlock::real(1.5, 2)], Matrix::identity(2)).unwrap();
        let e = OperatorMatrix::build_from_blocks(bs).unwrap();
        let p = mat_power(&e, EULER).unwrap();
        let s = 1.5f64.exp();
        let expect = Matrix::from_rows(&[&[s, 0.0], &[s, s]]);
        assert!(p.max_abs_diff(&expect) < 1e-12 * s);
    }

    #[test]
    fn power_rejects_bad_t() {
        let e = op2(&[&[2.0, 0.0], &[0.0, 3.0]]).unwrap();
        assert!(matches!(mat_power(&e, f64::NAN), Err(Error::Range(_))));
        assert!(matches!(mat_power(&e, f64::INFINITY), Err(Error::Range(_))));
        assert!(matches!(mat_power(&e, -1.0), Err(Error::Precondition(_))));
        assert!(matches!(mat_power(&e, 1e300), Err(Error::Range(_))));
    }

    #[test]
    fn scalar_real_block() {
        let e = OperatorMatrix::diagonal(&[2.0]).unwrap();
        assert_eq!(e.entries(), &Matrix::from_rows(&[&[2.0]]));
    }

    #[test]
    fn complex_pair_block() {
        let bs = BlockStructure::new(alloc::vec![JordanBlock::complex(1.5, 1.0, 1)], Matrix::identity(2)).unwrap();
        let e = OperatorMatrix::build_from_blocks(bs).unwrap();
        let expect = Matrix::from_rows(&[&[1.5, -1.0], &[1.0, 1.5]]);
        assert!(e.entries().max_abs_diff(&expect) < 1e-15);
        assert_eq!(e.eigen_real_parts(), &[1.5, 1.5]);
    }

    #[test]
    fn two_real_cells_with_basis_change() {
        let p = Matrix::from_rows(&[&[1.0, 0.3, -0.2], &[0.1, 1.2, 0.4], &[-0.5, 0.2, 0.9]]);
        let bs = BlockStructure::new(alloc::vec![JordanBlock::real(3.0, 1), JordanBlock::real(2.0, 2)], p).unwrap();
        assert_eq!(bs.blocks()[0], JordanBlock::real(2.0, 2));
        let e = OperatorMatrix::build_from_blocks(bs.clone()).unwrap();
        assert_eq!(e.eigen_real_parts(), &[2.0, 2.0, 3.0]);
        let h = e.holder_indices();
        assert!((h[0] - 0.5).abs() < 1e-15 && (h[1] - 0.5).abs() < 1e-15 && (h[2] - 1.0 / 3.0).abs() < 1e-15);
        assert!((e.trace() - 7.0).abs() < 1e-10);
        let raw = OperatorMatrix::from_matrix(e.entries().clone()).unwrap();
        for (x, y) in raw.eigen_real_parts().iter().zip(e.eigen_real_parts()) {
            assert!((x - y).abs() < 1e-6);
        }
        // invariance of each W_j
        for j in 0..2 {
            let basis = bs.subspace_basis(j);
            let proj = bs.projector(j, j).unwrap();
            for c in 0..basis.cols() {
                let v = basis.column(c);
                let ev = e.entries().mul_vec(&v);
                let pv = proj.mul_vec(&ev);
                let resid: f64 = ev.iter().zip(&pv).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(resid < 1e-8);
            }
        }
        assert_eq!(bs.p_index(0, 1), 2);
        assert_eq!(bs.max_cell_size(), 2);
    }

    #[test]
    fn rejects_small_spectrum_and_singular_basis() {
        assert!(matches!(op2(&[&[0.9, 0.0], &[0.0, 2.0]]), Err(Error::SpectrumTooSmall { .. })));
        let bs = BlockStructure::new(alloc::vec![JordanBlock::real(1.0, 1)], Matrix::identity(1)).unwrap();
        assert!(matches!(OperatorMatrix::build_from_blocks(bs), Err(Error::SpectrumTooSmall { .. })));
        let p = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0 + 1e-12]]);
        let r = BlockStructure::new(alloc::vec![JordanBlock::real(2.0, 1), JordanBlock::real(3.0, 1)], p);
        assert!(matches!(r, Err(Error::SingularBasis { .. })));
    }

    #[test]
    fn jordan_bounds_examples() {
        let r = jordan_norm_bounds_check(&JordanBlock::real(2.0, 1), &[10.0], 1e-9).unwrap();
        assert!((r.entries[0].norm - 100.0).abs() < 1e-9);
        assert!(r.all_hold());
        let r = jordan_norm_bounds_check(&JordanBlock::real(1.5, 2), &[EULER], 1e-9).unwrap();
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((r.entries[0].norm / 1.5f64.exp() - golden).abs() < 1e-12);
        let r = jordan_norm_bounds_check(&JordanBlock::complex(1.5, 3.0, 1), &[0.1, 7.0], 1e-9).unwrap();
        for e in &r.entries {
            assert!((e.norm / e.t.powf(1.5) - 1.0).abs() < 1e-12);
        }
        assert!(jordan_norm_bounds_check(&JordanBlock::real(2.0, 1), &[1.5], 1e-9).is_err());
    }
}
