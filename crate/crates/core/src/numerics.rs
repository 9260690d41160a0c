//! Complex Hermitian matrix primitives.
//!
//! Every covariance in the crate is a [`HermitianMatrix`]. Arithmetic that
//! composes Hermitian matrices re-symmetrizes its output so that rounding
//! drift never accumulates into a visibly non-Hermitian matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Asymmetry accepted by the checked constructor.
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Ridge applied by [`HermitianMatrix::inverse_regularized`] on a failed
/// factorization.
pub const DEFAULT_RIDGE: f64 = 1e-10;

/// Relative gap under which the two leading eigenvalues count as tied.
pub const DEGENERACY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not positive definite")]
    NonPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not Hermitian (max asymmetry {0:e})")]
    NotHermitian(f64),
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("matrix must have dimension at least one")]
    Empty,
}

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// A square complex matrix equal to its own conjugate transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    /// Validates symmetry within [`HERMITIAN_TOL`] (relative to the largest
    /// entry) and stores the symmetrized matrix.
    pub fn new(m: CMatrix) -> Result<Self, NumericsError> {
        if m.nrows() != m.ncols() {
            return Err(NumericsError::NotSquare(m.nrows(), m.ncols()));
        }
        if m.nrows() == 0 {
            return Err(NumericsError::Empty);
        }
        let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let asym = max_asymmetry(&m);
        if asym > HERMITIAN_TOL * scale {
            return Err(NumericsError::NotHermitian(asym));
        }
        Ok(Self::symmetrize(m))
    }

    /// Averages `m` with its conjugate transpose. The caller guarantees `m`
    /// is square and Hermitian up to rounding.
    pub fn symmetrize(m: CMatrix) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        let h = (&m + m.adjoint()).scale(0.5);
        HermitianMatrix(h)
    }

    pub fn zeros(dim: usize) -> Self {
        HermitianMatrix(CMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        HermitianMatrix(CMatrix::identity(dim, dim))
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        HermitianMatrix(CMatrix::identity(dim, dim).scale(s))
    }

    pub fn from_real_diagonal(d: &[f64]) -> Self {
        let v = CVector::from_iterator(d.len(), d.iter().map(|&x| c(x, 0.0)));
        HermitianMatrix(CMatrix::from_diagonal(&v))
    }

    /// `v v^H`.
    pub fn outer(v: &CVector) -> Self {
        Self::symmetrize(v * v.adjoint())
    }

    /// `A A^H` for any (possibly rectangular) `A`.
    pub fn gram(a: &CMatrix) -> Self {
        Self::symmetrize(a * a.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.diagonal().iter().map(|z| z.re).sum()
    }

    /// `Re tr(self * other)`.
    pub fn trace_product(&self, other: &HermitianMatrix) -> f64 {
        trace_product(&self.0, &other.0)
    }

    pub fn scale(&self, s: f64) -> Self {
        HermitianMatrix(self.0.scale(s))
    }

    pub fn add(&self, other: &HermitianMatrix) -> Self {
        HermitianMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &HermitianMatrix) -> Self {
        HermitianMatrix(&self.0 - &other.0)
    }

    pub fn add_assign(&mut self, other: &HermitianMatrix) {
        self.0 += &other.0;
    }

    pub fn add_scaled_identity(&self, s: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += c(s, 0.0);
        }
        HermitianMatrix(m)
    }

    /// Off-diagonal entries set to zero.
    pub fn diag_part(&self) -> Self {
        HermitianMatrix(CMatrix::from_diagonal(&self.0.diagonal().map(|z| c(z.re, 0.0))))
    }

    /// `A self A^H`.
    pub fn congruence(&self, a: &CMatrix) -> Self {
        Self::symmetrize(a * &self.0 * a.adjoint())
    }

    /// `A^H self A`.
    pub fn adjoint_congruence(&self, a: &CMatrix) -> Self {
        Self::symmetrize(a.adjoint() * &self.0 * a)
    }

    pub fn frobenius_distance(&self, other: &HermitianMatrix) -> f64 {
        (&self.0 - &other.0).norm()
    }

    pub fn cholesky(&self) -> Result<CholeskyFactor, NumericsError> {
        CholeskyFactor::new(&self.0)
    }

    /// Natural-log determinant from the Cholesky factor.
    pub fn logdet(&self) -> Result<f64, NumericsError> {
        Ok(self.cholesky()?.logdet())
    }

    /// `(self + ridge I)^{-1}` through a Cholesky factorization.
    pub fn psd_inverse(&self, ridge: f64) -> Result<Self, NumericsError> {
        let shifted = if ridge > 0.0 { self.add_scaled_identity(ridge) } else { self.clone() };
        let chol = shifted.cholesky()?;
        Ok(chol.inverse())
    }

    /// Inverse without ridge, retried with [`DEFAULT_RIDGE`] (scaled by the
    /// largest diagonal entry) when the plain factorization fails.
    pub fn inverse_regularized(&self) -> Result<Self, NumericsError> {
        match self.psd_inverse(0.0) {
            Ok(inv) => Ok(inv),
            Err(_) => {
                let scale = self.0.diagonal().iter().map(|z| z.re.abs()).fold(1.0, f64::max);
                self.psd_inverse(DEFAULT_RIDGE * scale)
            }
        }
    }

    /// Eigenvalues in ascending order with matching unit eigenvectors as
    /// columns.
    pub fn eigh(&self) -> (Vec<f64>, CMatrix) {
        let eig = SymmetricEigen::new(self.0.clone());
        let mut order: Vec<usize> = (0..self.dim()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = CMatrix::zeros(self.dim(), self.dim());
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        (values, vectors)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let eig = SymmetricEigen::new(self.0.clone());
        eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        let eig = SymmetricEigen::new(self.0.clone());
        eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rebuilds the matrix with every eigenvalue passed through `f`.
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> Self {
        let (values, vectors) = self.eigh();
        let d = CVector::from_iterator(values.len(), values.iter().map(|&l| c(f(l), 0.0)));
        Self::symmetrize(&vectors * CMatrix::from_diagonal(&d) * vectors.adjoint())
    }

    /// Projection onto the PSD cone (negative eigenvalues set to zero).
    pub fn clip_psd(&self) -> Self {
        self.map_eigenvalues(|l| l.max(0.0))
    }

    /// Principal square root of the PSD part.
    pub fn sqrt_psd(&self) -> Self {
        self.map_eigenvalues(|l| l.max(0.0).sqrt())
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }

    /// `x^H self x`.
    pub fn quadratic_form(&self, x: &CVector) -> f64 {
        (x.adjoint() * &self.0 * x)[(0, 0)].re
    }

    /// The `rank` leading eigen-directions scaled by the square roots of
    /// their eigenvalues, i.e. a factor `V` with `V V^H` equal to the best
    /// rank-`rank` PSD approximation of `self`.
    pub fn precoder(&self, rank: usize) -> CMatrix {
        let (values, vectors) = self.eigh();
        let dim = self.dim();
        let rank = rank.min(dim);
        let mut v = CMatrix::zeros(dim, rank);
        for k in 0..rank {
            let src = dim - 1 - k;
            let s = values[src].max(0.0).sqrt();
            v.set_column(k, &vectors.column(src).scale(s));
        }
        v
    }
}

/// Unit eigenvector of the largest eigenvalue under a deterministic
/// convention.
#[derive(Debug, Clone)]
pub struct DominantEigen {
    pub value: f64,
    pub vector: CVector,
    /// Set when the two leading eigenvalues are tied within
    /// [`DEGENERACY_TOL`]; the vector is then the normalized projection of
    /// the first standard basis vector with a nonzero component in the
    /// leading eigenspace.
    pub degenerate: bool,
}

/// Leading eigenpair of a Hermitian matrix. The phase is fixed so that the
/// first entry with magnitude above `1e-12` is real and nonnegative.
pub fn dominant_eigenvector(m: &HermitianMatrix) -> DominantEigen {
    let (values, vectors) = m.eigh();
    let dim = m.dim();
    let top = values[dim - 1];
    let tol = DEGENERACY_TOL * top.abs().max(1.0);
    let first_in_space = values.iter().position(|&l| top - l <= tol).unwrap_or(dim - 1);
    let degenerate = first_in_space < dim - 1;

    let vector = if degenerate {
        let basis = vectors.columns(first_in_space, dim - first_in_space).into_owned();
        let projector = &basis * basis.adjoint();
        let mut chosen = vectors.column(dim - 1).into_owned();
        for k in 0..dim {
            let p = projector.column(k).into_owned();
            if p.norm() > 1e-8 {
                chosen = p;
                break;
            }
        }
        chosen.unscale(chosen.norm())
    } else {
        vectors.column(dim - 1).into_owned()
    };

    DominantEigen { value: top, vector: fix_phase(vector), degenerate }
}

/// Rotates `v` so that its first non-negligible entry is real nonnegative.
pub fn fix_phase(mut v: CVector) -> CVector {
    if let Some(z) = v.iter().find(|z| z.norm() > 1e-12).copied() {
        let rot = z.conj() / z.norm();
        v.iter_mut().for_each(|e| *e *= rot);
        if let Some(first) = v.iter_mut().find(|z| z.norm() > 1e-12) {
            first.im = 0.0;
        }
    }
    v
}

/// Lower-triangular factor `L` with `L L^H` equal to a Hermitian positive
/// definite matrix.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: CMatrix,
}

impl CholeskyFactor {
    /// Factorizes the lower triangle of `m`. Fails when a pivot is not
    /// strictly positive relative to the largest diagonal entry.
    pub fn new(m: &CMatrix) -> Result<Self, NumericsError> {
        let n = m.nrows();
        let scale = (0..n).map(|i| m[(i, i)].re.abs()).fold(0.0, f64::max);
        let floor = 1e-15 * scale;
        let mut l = CMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !d.is_finite() || d <= floor {
                return Err(NumericsError::NonPositiveDefinite);
            }
            let djj = d.sqrt();
            l[(j, j)] = c(djj, 0.0);
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn l(&self) -> &CMatrix {
        &self.l
    }

    pub fn logdet(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|z| z.re.ln()).sum::<f64>()
    }

    /// `L^{-1}`.
    pub fn l_inverse(&self) -> CMatrix {
        let n = self.l.nrows();
        self.l.solve_lower_triangular(&CMatrix::identity(n, n)).expect("nonsingular triangular factor")
    }

    pub fn inverse(&self) -> HermitianMatrix {
        let li = self.l_inverse();
        HermitianMatrix::symmetrize(li.adjoint() * li)
    }
}

/// `Re tr(A B)` for square matrices of equal size.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = a[(i, j)];
            let y = b[(j, i)];
            acc += x.re * y.re - x.im * y.im;
        }
    }
    acc
}

pub fn max_asymmetry(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Linear power from decibels.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn random_pd(rng: &mut ChaCha8Rng, dim: usize) -> HermitianMatrix {
        let a = random_matrix(rng, dim, dim);
        HermitianMatrix::gram(&a).add_scaled_identity(0.1)
    }

    #[test]
    fn logdet_identity_is_zero() {
        assert_eq!(HermitianMatrix::identity(3).logdet().unwrap(), 0.0);
    }

    #[test]
    fn logdet_diagonal() {
        let m = HermitianMatrix::from_real_diagonal(&[2.0, 2.0]);
        assert!((m.logdet().unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logdet_matches_eigenvalue_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = random_pd(&mut rng, 4);
            let (values, _) = m.eigh();
            let oracle: f64 = values.iter().map(|l| l.ln()).sum();
            assert!((m.logdet().unwrap() - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn logdet_rejects_indefinite() {
        let m = HermitianMatrix::from_real_diagonal(&[1.0, -1.0]);
        assert_eq!(m.logdet(), Err(NumericsError::NonPositiveDefinite));
    }

    #[test]
    fn inverse_of_identity_and_diagonal() {
        let inv = HermitianMatrix::identity(3).psd_inverse(0.0).unwrap();
        assert!(inv.frobenius_distance(&HermitianMatrix::identity(3)) < 1e-15);
        let inv = HermitianMatrix::from_real_diagonal(&[2.0, 4.0]).psd_inverse(0.0).unwrap();
        let expect = HermitianMatrix::from_real_diagonal(&[0.5, 0.25]);
        assert!(inv.frobenius_distance(&expect) < 1e-15);
    }

    #[test]
    fn inverse_with_ridge() {
        let inv = HermitianMatrix::zeros(2).psd_inverse(0.5).unwrap();
        assert!(inv.frobenius_distance(&HermitianMatrix::scaled_identity(2, 2.0)) < 1e-14);
        assert!(HermitianMatrix::zeros(2).psd_inverse(0.0).is_err());
    }

    #[test]
    fn inverse_residual_on_random_pd() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let m = random_pd(&mut rng, 4);
            let inv = m.psd_inverse(0.0).unwrap();
            let residual = (inv.as_matrix() * m.as_matrix() - CMatrix::identity(4, 4)).norm();
            assert!(residual < 1e-8);
            assert!(max_asymmetry(inv.as_matrix()) < 1e-10);
        }
    }

    #[test]
    fn dominant_eigenvector_diagonal() {
        let d = dominant_eigenvector(&HermitianMatrix::from_real_diagonal(&[1.0, 2.0]));
        assert!(!d.degenerate);
        assert!((d.vector[0].norm()) < 1e-12);
        assert!((d.vector[1] - c(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn dominant_eigenvector_identity_uses_convention() {
        let d = dominant_eigenvector(&HermitianMatrix::identity(2));
        assert!(d.degenerate);
        assert!((d.vector[0] - c(1.0, 0.0)).norm() < 1e-12);
        assert!(d.vector[1].norm() < 1e-12);
    }

    #[test]
    fn dominant_eigenvector_random_satisfies_eigen_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 4, 4);
            let m = HermitianMatrix::symmetrize(&a + a.adjoint());
            let eig = SymmetricEigen::new(m.as_matrix().clone());
            let lmax = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let d = dominant_eigenvector(&m);
            let residual = (m.as_matrix() * &d.vector - d.vector.scale(lmax)).norm();
            assert!(residual < 1e-8);
            assert!(d.vector[0].im.abs() < 1e-15 && d.vector[0].re >= 0.0);
        }
    }

    #[test]
    fn constructor_rejects_asymmetric() {
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(HermitianMatrix::new(m), Err(NumericsError::NotHermitian(_))));
        assert!(matches!(HermitianMatrix::new(CMatrix::zeros(2, 3)), Err(NumericsError::NotSquare(2, 3))));
    }

    #[test]
    fn precoder_reconstructs_low_rank() {
        let v = CVector::from_vec(vec![c(1.0, 0.5), c(-0.2, 0.3), c(0.0, 1.0)]);
        let m = HermitianMatrix::outer(&v);
        let p = m.precoder(1);
        let back = HermitianMatrix::gram(&p);
        assert!(back.frobenius_distance(&m) < 1e-12);
    }

    #[test]
    fn db_conversion() {
        assert!((db_to_linear(-30.0) - 1e-3).abs() < 1e-15);
        assert!((linear_to_db(100.0) - 20.0).abs() < 1e-12);
        assert_eq!(db_to_linear(f64::NEG_INFINITY), 0.0);
    }

    fn pd_strategy() -> impl Strategy<Value = HermitianMatrix> {
        (any::<u64>(), 1usize..6).prop_map(|(seed, dim)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_pd(&mut rng, dim)
        })
    }

    proptest! {
        #[test]
        fn logdet_of_inverse_is_negated(m in pd_strategy()) {
            let inv = m.psd_inverse(0.0).unwrap();
            prop_assert!((inv.logdet().unwrap() + m.logdet().unwrap()).abs() < 1e-8);
            let dim = m.dim();
            let residual = (inv.as_matrix() * m.as_matrix() - CMatrix::identity(dim, dim)).norm();
            prop_assert!(residual < 1e-8);
        }

        #[test]
        fn dominant_rayleigh_quotient_beats_random(seed in any::<u64>(), dim in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, dim, dim);
            let m = HermitianMatrix::gram(&a);
            let d = dominant_eigenvector(&m);
            prop_assert!((d.vector.norm() - 1.0).abs() < 1e-12);
            let best = m.quadratic_form(&d.vector);
            for _ in 0..100 {
                let x = random_matrix(&mut rng, dim, 1).column(0).into_owned();
                let x = x.unscale(x.norm());
                prop_assert!(m.quadratic_form(&x) <= best + 1e-10);
            }
        }
    }
}
