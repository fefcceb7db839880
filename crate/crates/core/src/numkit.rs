//! Dense linear-algebra kernels.
//!
//! Everything here works on `nalgebra` dynamic matrices. Tolerances are
//! relative to the scale of the operands so results do not depend on units.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Symmetric matrix. Construction checks symmetry to a relative tolerance and
/// then stores the exact symmetric part.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl Serialize for SymMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        rows::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = rows::deserialize(d)?;
        SymMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

impl SymMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(invalid(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_finite(&m, "symmetric matrix")?;
        let scale = 1.0 + m.amax();
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(invalid(format!("matrix is not symmetric (max asymmetry {asym:.3e})")));
        }
        Ok(Self::symmetrize(m))
    }

    /// Takes the symmetric part of `m` without checking.
    pub fn symmetrize(m: Matrix) -> Self {
        let s = (&m + m.transpose()) * 0.5;
        SymMatrix(s)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Matrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(Matrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(Matrix::from_diagonal(&Vector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn eigenvalues(&self) -> Vector {
        SymmetricEigen::new(self.0.clone()).eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().max()
    }

    /// Quadratic form `xᵀ M x`.
    pub fn quad(&self, x: &Vector) -> f64 {
        x.dot(&(&self.0 * x))
    }
}

impl TryFrom<Matrix> for SymMatrix {
    type Error = Error;
    fn try_from(m: Matrix) -> Result<Self> {
        SymMatrix::new(m)
    }
}

impl From<SymMatrix> for Matrix {
    fn from(s: SymMatrix) -> Matrix {
        s.0
    }
}

impl std::ops::Deref for SymMatrix {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.0
    }
}

pub(crate) fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{what} contains non-finite entries")))
    }
}

/// Thin SVD `M = U diag(σ) Vᵀ` with `σ` sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vector,
    pub v_t: Matrix,
}

pub fn svd(m: &Matrix) -> Result<Svd> {
    check_finite(m, "svd operand")?;
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return Ok(Svd { u: Matrix::zeros(r, 0), singular_values: Vector::zeros(0), v_t: Matrix::zeros(0, c) });
    }
    let fm = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    let d = fm.thin_svd().map_err(|e| Error::SolverFailure { iterations: 0, detail: format!("svd did not converge: {e:?}") })?;
    let (fu, fs, fv) = (d.U(), d.S().column_vector(), d.V());
    Ok(Svd {
        u: Matrix::from_fn(r, k, |i, j| fu[(i, j)]),
        singular_values: Vector::from_fn(k, |i, _| fs[i]),
        v_t: Matrix::from_fn(k, c, |i, j| fv[(j, i)]),
    })
}

pub fn singular_values(m: &Matrix) -> Result<Vector> {
    Ok(svd(m)?.singular_values)
}

/// Moore-Penrose pseudo-inverse via SVD.
///
/// Singular values below `tol` are treated as zero. `tol = 0` selects the
/// automatic threshold `eps · max(rows, cols) · σ_max`.
pub fn pinv(m: &Matrix, tol: f64) -> Result<Matrix> {
    check_finite(m, "pinv operand")?;
    if !(tol >= 0.0) {
        return Err(invalid("pinv tolerance must be non-negative"));
    }
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(Matrix::zeros(c, r));
    }
    let svd = svd(m)?;
    let smax = svd.singular_values.max();
    let cut = if tol == 0.0 {
        f64::EPSILON * r.max(c) as f64 * smax
    } else {
        tol
    };
    let mut out = Matrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            // out += v_k u_kᵀ / s
            let vk = svd.v_t.row(k).transpose();
            let uk = svd.u.column(k);
            out.ger(1.0 / s, &vk, &uk, 1.0);
        }
    }
    Ok(out)
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn numerical_rank(m: &Matrix, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let Ok(sv) = singular_values(m) else {
        return 0;
    };
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// True iff `M − margin·I` admits a Cholesky factorization.
pub fn is_positive_definite(m: &SymMatrix, margin: f64) -> bool {
    let n = m.dim();
    let shifted = m.as_matrix() - Matrix::identity(n, n) * margin;
    Cholesky::new(shifted).is_some()
}

pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    if !a.is_square() {
        return Err(invalid("spectral radius needs a square matrix"));
    }
    check_finite(a, "matrix")?;
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            out.view_mut((i * br, j * bc), (br, bc))
                .copy_from(&(b * a[(i, j)]));
        }
    }
    out
}

/// Solves `AᵀPA − P + Q = 0` through the vectorized system
/// `(I − Aᵀ⊗Aᵀ) vec(P) = vec(Q)`.
pub fn solve_discrete_lyapunov(a: &Matrix, q: &SymMatrix) -> Result<SymMatrix> {
    let n = a.nrows();
    if !a.is_square() || q.dim() != n {
        return Err(invalid(format!(
            "lyapunov: A is {}x{}, Q is {}x{}",
            a.nrows(),
            a.ncols(),
            q.dim(),
            q.dim()
        )));
    }
    let rho = spectral_radius(a)?;
    if rho >= 1.0 {
        return Err(Error::Unstable { spectral_radius: rho });
    }
    let at = a.transpose();
    let lhs = Matrix::identity(n * n, n * n) - kron(&at, &at);
    let rhs = Vector::from_column_slice(q.as_matrix().as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SolverFailure {
            iterations: 0,
            detail: "singular Kronecker system in Lyapunov solve".into(),
        })?;
    let p = Matrix::from_column_slice(n, n, sol.as_slice());
    Ok(SymMatrix::symmetrize(p))
}

/// Block-diagonal matrix from the given blocks.
pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let r: usize = blocks.iter().map(|b| b.nrows()).sum();
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(r, c);
    let (mut i, mut j) = (0, 0);
    for b in blocks {
        out.view_mut((i, j), b.shape()).copy_from(*b);
        i += b.nrows();
        j += b.ncols();
    }
    out
}

/// Vertical concatenation; all blocks must share a column count.
pub fn vstack(blocks: &[&Matrix]) -> Matrix {
    let c = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let r: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(r, c);
    let mut i = 0;
    for b in blocks {
        assert_eq!(b.ncols(), c, "vstack column mismatch");
        out.view_mut((i, 0), b.shape()).copy_from(*b);
        i += b.nrows();
    }
    out
}

/// Horizontal concatenation; all blocks must share a row count.
pub fn hstack(blocks: &[&Matrix]) -> Matrix {
    let r = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(r, c);
    let mut j = 0;
    for b in blocks {
        assert_eq!(b.nrows(), r, "hstack row mismatch");
        out.view_mut((0, j), b.shape()).copy_from(*b);
        j += b.ncols();
    }
    out
}

/// Row-major construction helper.
pub fn mat(rows: usize, cols: usize, row_major: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, cols, row_major)
}

pub fn vec(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

/// Serde adapter storing a matrix as a list of rows.
pub mod rows {
    use super::Matrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        (m.nrows(), m.ncols(), rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let (r, c, rows): (usize, usize, Vec<Vec<f64>>) = Deserialize::deserialize(d)?;
        if rows.len() != r || rows.iter().any(|row| row.len() != c) {
            return Err(D::Error::custom(format!("matrix shape mismatch, declared {r}x{c}")));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(Matrix::from_row_slice(r, c, &flat))
    }
}

/// Serde adapter storing a vector as a plain list.
pub mod column {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        let v: Vec<f64> = Deserialize::deserialize(d)?;
        Ok(Vector::from_vec(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn pinv_of_identity_and_zero() {
        let i3 = Matrix::identity(3, 3);
        assert!((pinv(&i3, 0.0).unwrap() - &i3).amax() < 1e-15);
        let z = Matrix::zeros(2, 3);
        let p = pinv(&z, 0.0).unwrap();
        assert_eq!(p.shape(), (3, 2));
        assert_eq!(p.amax(), 0.0);
    }

    #[test]
    fn pinv_rejects_nan() {
        let mut m = Matrix::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(pinv(&m, 0.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pinv_wide_full_row_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random(&mut rng, 5, 8);
        let p = pinv(&m, 0.0).unwrap();
        assert!((&m * &p * &m - &m).amax() <= 1e-8);
        // full row rank: M M⁺ = I
        assert!((&m * &p - Matrix::identity(5, 5)).amax() < 1e-10);
    }

    #[test]
    fn positive_definite_examples() {
        assert!(is_positive_definite(&SymMatrix::identity(2), 0.0));
        let neg = SymMatrix::new(-Matrix::identity(2, 2)).unwrap();
        assert!(!is_positive_definite(&neg, 0.0));
        let m = SymMatrix::new(mat(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        assert!(is_positive_definite(&m, 0.9));
        assert!(!is_positive_definite(&m, 1.1));
    }

    #[test]
    fn symmetric_check() {
        assert!(SymMatrix::new(mat(2, 2, &[1.0, 2.0, 2.1, 1.0])).is_err());
        assert!(SymMatrix::new(mat(2, 3, &[0.0; 6])).is_err());
    }

    #[test]
    fn lyapunov_scalar_series() {
        let a = Matrix::identity(2, 2) * 0.5;
        let p = solve_discrete_lyapunov(&a, &SymMatrix::identity(2)).unwrap();
        assert!((p.as_matrix() - Matrix::identity(2, 2) * (4.0 / 3.0)).amax() < 1e-14);
        let p0 = solve_discrete_lyapunov(&Matrix::zeros(2, 2), &SymMatrix::identity(2)).unwrap();
        assert!((p0.as_matrix() - Matrix::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn lyapunov_benchmark_residual() {
        let a = mat(2, 2, &[0.7326, -0.0861, 0.1722, 0.9909]);
        let q = SymMatrix::identity(2);
        let p = solve_discrete_lyapunov(&a, &q).unwrap();
        let res = a.transpose() * p.as_matrix() * &a - p.as_matrix() + q.as_matrix();
        assert!(res.amax() <= 1e-8);
        assert!(is_positive_definite(&p, 0.0));
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let a = Matrix::identity(2, 2) * 1.01;
        assert!(matches!(
            solve_discrete_lyapunov(&a, &SymMatrix::identity(2)),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn kron_shape() {
        let k = kron(&Matrix::identity(2, 2), &mat(1, 2, &[1.0, 2.0]));
        assert_eq!(k, mat(2, 4, &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0]));
    }
}
