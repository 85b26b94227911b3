//! Dense complex linear algebra on truncated Hilbert spaces and small section spaces.
//!
//! `ComplexMatrix` wraps a column-major `faer` matrix; everything exposed here is a pure
//! function of its inputs.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};
use serde::{Deserialize, Serialize};

use crate::error::{BsError, Result};

pub type C64 = num_complex::Complex64;

/// Relative Hermiticity tolerance accepted by [`eig_hermitian`].
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Default kernel threshold of [`spectral_gap`], relative to the spectral radius.
pub const DEFAULT_KERNEL_TOL_REL: f64 = 1e-8;
/// Relative singular-value threshold below which [`projector_onto_span`] declares rank loss.
pub const RANK_TOL: f64 = 1e-10;
/// Largest number of squarings `expm` performs; inputs with
/// ‖scale·M‖₁ > θ₁₃·2^MAX_SQUARINGS ≈ 6.2e18 are rejected.
pub const MAX_SQUARINGS: u32 = 60;

const THETA_13: f64 = 5.371920351148152;
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "MatrixJson", try_from = "MatrixJson")]
pub struct ComplexMatrix {
    inner: Mat<C64>,
}

/// Wire format: `{rows, cols, re: [...], im: [...]}` in row-major order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl From<ComplexMatrix> for MatrixJson {
    fn from(m: ComplexMatrix) -> Self {
        let data = m.to_row_major();
        MatrixJson { rows: m.rows(), cols: m.cols(), re: data.iter().map(|z| z.re).collect(), im: data.iter().map(|z| z.im).collect() }
    }
}

impl TryFrom<MatrixJson> for ComplexMatrix {
    type Error = BsError;
    fn try_from(j: MatrixJson) -> Result<Self> {
        if j.re.len() != j.im.len() {
            return Err(BsError::Dimension(format!("re has {} entries, im has {}", j.re.len(), j.im.len())));
        }
        let data = j.re.iter().zip(&j.im).map(|(&a, &b)| C64::new(a, b)).collect();
        ComplexMatrix::from_row_major(j.rows, j.cols, data)
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { inner: Mat::zeros(rows, cols) }
    }

    pub fn identity(n: usize) -> Self {
        Self { inner: Mat::identity(n, n) }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        Self { inner: Mat::from_fn(rows, cols, f) }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(BsError::Dimension(format!("{rows}x{cols} needs {} entries, got {}", rows * cols, data.len())));
        }
        Ok(Self::from_fn(rows, cols, |i, j| data[i * cols + j]))
    }

    pub fn from_diag(d: &[C64]) -> Self {
        let n = d.len();
        Self::from_fn(n, n, |i, j| if i == j { d[i] } else { C64::new(0.0, 0.0) })
    }

    pub fn from_real_diag(d: &[f64]) -> Self {
        let n = d.len();
        Self::from_fn(n, n, |i, j| C64::new(if i == j { d[i] } else { 0.0 }, 0.0))
    }

    pub fn from_columns(cols: &[Vec<C64>]) -> Result<Self> {
        let n = cols.first().map_or(0, Vec::len);
        if cols.iter().any(|c| c.len() != n) {
            return Err(BsError::Dimension("columns of unequal length".into()));
        }
        Ok(Self::from_fn(n, cols.len(), |i, j| cols[j][i]))
    }

    pub fn from_faer(inner: Mat<C64>) -> Self {
        Self { inner }
    }

    pub fn as_faer(&self) -> MatRef<'_, C64> {
        self.inner.as_ref()
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.inner[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.inner[(i, j)] = v;
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows()).map(|i| self.inner[(i, j)]).collect()
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.rows().min(self.cols())).map(|i| self.inner[(i, i)]).collect()
    }

    pub fn to_row_major(&self) -> Vec<C64> {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(self.inner[(i, j)]);
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols() != other.rows() {
            return Err(BsError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows(),
                self.cols(),
                other.rows(),
                other.cols()
            )));
        }
        Ok(Self { inner: &self.inner * &other.inner })
    }

    /// Matrix–vector product.
    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        if v.len() != self.cols() {
            return Err(BsError::Dimension(format!("vector of length {} for {} columns", v.len(), self.cols())));
        }
        let mut out = vec![C64::new(0.0, 0.0); self.rows()];
        for j in 0..self.cols() {
            let vj = v[j];
            if vj == C64::new(0.0, 0.0) {
                continue;
            }
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.inner[(i, j)] * vj;
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self { inner: &self.inner + &other.inner })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self { inner: &self.inner - &other.inner })
    }

    pub fn scale(&self, c: C64) -> Self {
        Self::from_fn(self.rows(), self.cols(), |i, j| c * self.inner[(i, j)])
    }

    pub fn adjoint(&self) -> Self {
        Self { inner: self.inner.adjoint().to_owned() }
    }

    pub fn transpose(&self) -> Self {
        Self { inner: self.inner.transpose().to_owned() }
    }

    pub fn conj(&self) -> Self {
        Self::from_fn(self.rows(), self.cols(), |i, j| self.inner[(i, j)].conj())
    }

    pub fn trace(&self) -> C64 {
        self.diagonal().iter().sum()
    }

    pub fn norm_max(&self) -> f64 {
        self.inner.norm_max()
    }

    pub fn norm_fro(&self) -> f64 {
        self.inner.norm_l2()
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.cols()).map(|j| (0..self.rows()).map(|i| self.inner[(i, j)].norm()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Spectral (operator 2-) norm.
    pub fn norm_op(&self) -> f64 {
        if self.rows() == 0 || self.cols() == 0 {
            return 0.0;
        }
        match self.inner.singular_values() {
            Ok(s) => s.into_iter().fold(0.0, f64::max),
            Err(_) => f64::NAN,
        }
    }

    /// ‖A − A†‖_max.
    pub fn hermitian_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows();
        let mut d: f64 = 0.0;
        for j in 0..n {
            for i in j..n {
                d = d.max((self.inner[(i, j)] - self.inner[(j, i)].conj()).norm());
            }
        }
        d
    }

    /// ‖A − A†‖_max ≤ rel_tol·‖A‖_max.
    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        self.hermitian_defect() <= rel_tol * self.norm_max().max(f64::MIN_POSITIVE)
    }

    /// (A + A†)/2.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.rows(), self.cols(), |i, j| 0.5 * (self.inner[(i, j)] + self.inner[(j, i)].conj()))
    }

    pub fn is_finite(&self) -> bool {
        self.to_row_major().iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.rows() != other.rows() || self.cols() != other.cols() {
            return Err(BsError::Dimension(format!("{}x{} vs {}x{}", self.rows(), self.cols(), other.rows(), other.cols())));
        }
        Ok(())
    }
}

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: ComplexMatrix,
}

impl Spectrum {
    /// V·f(Λ)·V†.
    pub fn apply_function(&self, f: impl Fn(f64) -> C64) -> ComplexMatrix {
        let v = &self.eigenvectors;
        let scaled = ComplexMatrix::from_fn(v.rows(), v.cols(), |i, j| v.get(i, j) * f(self.eigenvalues[j]));
        ComplexMatrix::from_faer(scaled.as_faer() * v.as_faer().adjoint())
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.apply_function(|l| C64::new(l, 0.0))
    }

    /// Projection onto the eigenvectors selected by `keep`.
    pub fn projector(&self, keep: impl Fn(usize, f64) -> bool) -> ComplexMatrix {
        self.apply_function_indexed(|k, l| if keep(k, l) { 1.0 } else { 0.0 })
    }

    fn apply_function_indexed(&self, f: impl Fn(usize, f64) -> f64) -> ComplexMatrix {
        let v = &self.eigenvectors;
        let scaled = ComplexMatrix::from_fn(v.rows(), v.cols(), |i, j| v.get(i, j) * f(j, self.eigenvalues[j]));
        ComplexMatrix::from_faer(scaled.as_faer() * v.as_faer().adjoint())
    }
}

/// Hermitian eigendecomposition with ascending eigenvalues.
pub fn eig_hermitian(a: &ComplexMatrix) -> Result<Spectrum> {
    if !a.is_square() {
        return Err(BsError::Dimension(format!("eig of {}x{}", a.rows(), a.cols())));
    }
    let tol = HERMITIAN_TOL * a.norm_max().max(f64::MIN_POSITIVE);
    let defect = a.hermitian_defect();
    if defect > tol {
        return Err(BsError::NotHermitian { defect, tol });
    }
    let n = a.rows();
    if n == 0 {
        return Ok(Spectrum { eigenvalues: vec![], eigenvectors: ComplexMatrix::zeros(0, 0) });
    }
    let h = a.hermitian_part();
    let evd = h.inner.self_adjoint_eigen(Side::Lower).map_err(|e| BsError::NumericRange(format!("eigensolver failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let eigenvalues = (0..n).map(|k| s[k].re).collect();
    Ok(Spectrum { eigenvalues, eigenvectors: ComplexMatrix::from_faer(evd.U().to_owned()) })
}

/// e^{scale·M}. Hermitian inputs use the eigendecomposition; everything else uses
/// degree-13 Padé scaling and squaring.
pub fn expm(m: &ComplexMatrix, scale: C64) -> Result<ComplexMatrix> {
    if !m.is_square() {
        return Err(BsError::Dimension(format!("expm of {}x{}", m.rows(), m.cols())));
    }
    if m.rows() == 0 {
        return Ok(ComplexMatrix::zeros(0, 0));
    }
    if m.is_hermitian(1e-12) {
        let spec = eig_hermitian(m)?;
        let max_re = spec.eigenvalues.iter().map(|&l| (scale * l).re).fold(f64::MIN, f64::max);
        if max_re > 700.0 {
            return Err(BsError::NumericRange(format!("exponent {max_re:.3e} overflows")));
        }
        return Ok(spec.apply_function(|l| (scale * l).exp()));
    }
    expm_pade(&m.scale(scale))
}

/// Degree-13 Padé approximant with scaling and squaring (Higham 2005).
pub fn expm_pade(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = a.rows();
    let norm = a.norm_one();
    if !norm.is_finite() {
        return Err(BsError::NumericRange("non-finite input".into()));
    }
    let s = if norm > THETA_13 { (norm / THETA_13).log2().ceil() as u32 } else { 0 };
    if s > MAX_SQUARINGS {
        return Err(BsError::NumericRange(format!("‖A‖₁ = {norm:.3e} needs {s} squarings (cap {MAX_SQUARINGS})")));
    }
    let a = a.scale(C64::new(0.5f64.powi(s as i32), 0.0)).inner;
    let b = |k: usize| C64::new(PADE_13[k], 0.0);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let lin = |c6: C64, c4: C64, c2: C64, c0: Option<C64>| {
        let mut m = Mat::<C64>::from_fn(n, n, |i, j| c6 * a6[(i, j)] + c4 * a4[(i, j)] + c2 * a2[(i, j)]);
        if let Some(c) = c0 {
            for i in 0..n {
                m[(i, i)] += c;
            }
        }
        m
    };
    let u_inner = &a6 * &lin(b(13), b(11), b(9), None) + lin(b(7), b(5), b(3), Some(b(1)));
    let u = &a * &u_inner;
    let v = &a6 * &lin(b(12), b(10), b(8), None) + lin(b(6), b(4), b(2), Some(b(0)));
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.partial_piv_lu().solve(&p);
    for _ in 0..s {
        r = &r * &r;
    }
    let out = ComplexMatrix::from_faer(r);
    if !out.is_finite() {
        return Err(BsError::NumericRange("matrix exponential overflowed".into()));
    }
    Ok(out)
}

/// Kernel threshold `DEFAULT_KERNEL_TOL_REL·‖A‖` for a Hermitian matrix.
pub fn default_kernel_tol(a: &ComplexMatrix) -> f64 {
    DEFAULT_KERNEL_TOL_REL * a.norm_op()
}

/// Smallest eigenvalue exceeding `kernel_tol`; `f64::INFINITY` when none does.
pub fn spectral_gap(a: &ComplexMatrix, kernel_tol: f64) -> Result<f64> {
    let spec = eig_hermitian(a)?;
    gap_from_eigenvalues(&spec.eigenvalues, kernel_tol)
}

pub fn gap_from_eigenvalues(eigenvalues: &[f64], kernel_tol: f64) -> Result<f64> {
    if let Some(&l) = eigenvalues.iter().find(|&&l| l < -kernel_tol) {
        return Err(BsError::NotPsd { eigenvalue: l });
    }
    Ok(eigenvalues.iter().copied().find(|&l| l > kernel_tol).unwrap_or(f64::INFINITY))
}

/// Orthogonal projection onto the span of the columns of `v`.
pub fn projector_onto_span(v: &ComplexMatrix) -> Result<ComplexMatrix> {
    let k = v.cols();
    if k == 0 {
        return Ok(ComplexMatrix::zeros(v.rows(), v.rows()));
    }
    let gram = ComplexMatrix::from_faer(v.as_faer().adjoint() * v.as_faer());
    let spec = eig_hermitian(&gram)?;
    let top = spec.eigenvalues.last().copied().unwrap_or(0.0);
    let rank = spec.eigenvalues.iter().filter(|&&l| l > RANK_TOL * RANK_TOL * top.max(0.0)).count();
    if rank < k || top <= 0.0 {
        return Err(BsError::RankDeficient { rank, cols: k });
    }
    // Q = V U Λ^{-1/2} is an orthonormal basis of the span.
    let u = &spec.eigenvectors;
    let w = ComplexMatrix::from_fn(k, k, |i, j| u.get(i, j) / spec.eigenvalues[j].sqrt());
    let q = v.as_faer() * w.as_faer();
    let p = ComplexMatrix::from_faer(&q * q.adjoint());
    Ok(p.hermitian_part())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let z = ComplexMatrix::zeros(5, 5);
        let e = expm(&z, c(3.0, -2.0)).unwrap();
        assert!(e.sub(&ComplexMatrix::identity(5)).unwrap().norm_max() < 1e-15);
    }

    #[test]
    fn expm_scalar_phases() {
        let m = ComplexMatrix::from_diag(&[c(0.0, std::f64::consts::PI), c(0.0, 0.0)]);
        let e = expm(&m, c(1.0, 0.0)).unwrap();
        let want = ComplexMatrix::from_real_diag(&[-1.0, 1.0]);
        assert!(e.sub(&want).unwrap().norm_max() < 1e-14);
    }

    #[test]
    fn pade_path_matches_eigen_path_on_hermitian() {
        let h = ComplexMatrix::from_fn(6, 6, |i, j| {
            let a = c((i + 2 * j) as f64 * 0.1, (i as f64 - j as f64) * 0.05);
            if i == j { c(a.re, 0.0) } else { a }
        })
        .hermitian_part();
        let a = expm(&h, c(0.3, -1.1)).unwrap();
        let b = expm_pade(&h.scale(c(0.3, -1.1))).unwrap();
        assert!(a.sub(&b).unwrap().norm_max() < 1e-11);
    }

    #[test]
    fn expm_rejects_non_square() {
        assert!(matches!(expm(&ComplexMatrix::zeros(2, 3), c(1.0, 0.0)), Err(BsError::Dimension(_))));
    }

    #[test]
    fn expm_caps_squarings() {
        let m = ComplexMatrix::from_fn(2, 2, |i, j| if i == 0 && j == 1 { c(1e30, 0.0) } else { c(0.0, 0.0) });
        assert!(matches!(expm(&m, c(1.0, 0.0)), Err(BsError::NumericRange(_))));
    }

    #[test]
    fn large_dissipative_generator_does_not_overflow() {
        // ν = 1e4, t = 5 on a non-normal generator with a large psd part.
        let n = 6;
        let a = ComplexMatrix::from_real_diag(&[0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        let h = ComplexMatrix::from_fn(n, n, |i, j| c(((i * j) % 3) as f64 * 0.1, 0.0)).hermitian_part();
        let t = ComplexMatrix::from_fn(n, n, |i, j| 1e4 * a.get(i, j) + c(0.0, 1.0) * h.get(i, j));
        let e = expm(&t, c(-5.0, 0.0)).unwrap();
        assert!(e.is_finite());
        assert!(e.norm_op() <= 1.0 + 1e-9);
    }

    #[test]
    fn eig_of_diagonal() {
        let s = eig_hermitian(&ComplexMatrix::from_real_diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(s.eigenvalues.len(), 3);
        for (got, want) in s.eigenvalues.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-14);
        }
        // Permuted unit vectors: column k has a single unit-modulus entry.
        for k in 0..3 {
            let col = s.eigenvectors.column(k);
            let big = col.iter().filter(|z| z.norm() > 0.5).count();
            assert_eq!(big, 1);
        }
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let m = ComplexMatrix::from_fn(2, 2, |i, j| if i < j { c(1.0, 0.0) } else { c(0.0, 0.0) });
        assert!(matches!(eig_hermitian(&m), Err(BsError::NotHermitian { .. })));
    }

    #[test]
    fn spectral_gap_examples() {
        let d = ComplexMatrix::from_real_diag(&[0.0, 0.0, 4.0, 5.0]);
        assert_eq!(spectral_gap(&d, 1e-8).unwrap(), 4.0);
        assert!(spectral_gap(&ComplexMatrix::zeros(3, 3), 1e-8).unwrap().is_infinite());
        let neg = ComplexMatrix::from_real_diag(&[-1.0, 2.0]);
        assert!(matches!(spectral_gap(&neg, 1e-8), Err(BsError::NotPsd { .. })));
    }

    #[test]
    fn projector_examples() {
        let e1 = ComplexMatrix::from_columns(&[vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]]).unwrap();
        let p = projector_onto_span(&e1).unwrap();
        assert!(p.sub(&ComplexMatrix::from_real_diag(&[1.0, 0.0, 0.0])).unwrap().norm_max() < 1e-14);
        let full = ComplexMatrix::from_fn(3, 3, |i, j| c((i + 1) as f64, (j * i) as f64) + if i == j { c(5.0, 0.0) } else { c(0.0, 0.0) });
        let p = projector_onto_span(&full).unwrap();
        assert!(p.sub(&ComplexMatrix::identity(3)).unwrap().norm_max() < 1e-10);
    }

    #[test]
    fn projector_rejects_rank_deficient() {
        let v = ComplexMatrix::from_columns(&[vec![c(1.0, 0.0), c(1.0, 0.0)], vec![c(2.0, 0.0), c(2.0, 0.0)]]).unwrap();
        assert!(matches!(projector_onto_span(&v), Err(BsError::RankDeficient { rank: 1, cols: 2 })));
    }

    #[test]
    fn json_round_trip_is_row_major() {
        let m = ComplexMatrix::from_row_major(2, 3, (0..6).map(|k| c(k as f64, -(k as f64))).collect()).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"re\":[0.0,1.0,2.0,3.0,4.0,5.0]"));
        let back: ComplexMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"rows":2,"cols":2,"re":[1.0],"im":[0.0]}"#;
        assert!(serde_json::from_str::<ComplexMatrix>(bad).is_err());
    }
}
