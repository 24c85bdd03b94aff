//! Dense complex linear-algebra kernels.
//!
//! Everything is column-major (nalgebra's native layout), so `vectorize` is a
//! plain copy and `vec(ABC) = (Cᵀ ⊗ A) vec(B)` holds without reshuffling.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Largest number of entries `kron` will allocate.
pub const KRON_ENTRY_LIMIT: usize = 1 << 27;

/// Tolerance used by [`eig_hermitian`] to accept a matrix as Hermitian.
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix must have at least one row and one column (got {rows}x{cols})")]
    Empty { rows: usize, cols: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("kronecker product of {rows}x{cols} exceeds the {limit}-entry limit")]
    DimensionOverflow { rows: usize, cols: usize, limit: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("matrix is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },
}

/// Validates the `ComplexMatrix` invariants: non-empty, all entries finite.
pub fn checked(m: CMatrix) -> Result<CMatrix, NumericsError> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(NumericsError::Empty { rows: m.nrows(), cols: m.ncols() });
    }
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            let v = m[(r, c)];
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(NumericsError::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(m)
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> Result<CMatrix, NumericsError> {
    let rows = a.nrows().saturating_mul(b.nrows());
    let cols = a.ncols().saturating_mul(b.ncols());
    if rows.saturating_mul(cols) > KRON_ENTRY_LIMIT {
        return Err(NumericsError::DimensionOverflow { rows, cols, limit: KRON_ENTRY_LIMIT });
    }
    let (br, bc) = b.shape();
    let mut out = CMatrix::zeros(rows, cols);
    for ja in 0..a.ncols() {
        for ia in 0..a.nrows() {
            let s = a[(ia, ja)];
            if s == C64::new(0.0, 0.0) {
                continue;
            }
            for jb in 0..bc {
                for ib in 0..br {
                    out[(ia * br + ib, ja * bc + jb)] = s * b[(ib, jb)];
                }
            }
        }
    }
    Ok(out)
}

/// Kronecker product of two column vectors (no size limit needed in practice).
pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    let n = b.len();
    CVector::from_fn(a.len() * n, |i, _| a[i / n] * b[i % n])
}

/// Column-major stacking.
pub fn vectorize(a: &CMatrix) -> CVector {
    CVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &CVector, rows: usize, cols: usize) -> Result<CMatrix, NumericsError> {
    if v.len() != rows * cols {
        return Err(NumericsError::ShapeMismatch { expected: rows * cols, got: v.len() });
    }
    Ok(CMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Minimum-norm least-squares solution plus rank diagnostics.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub solution: CVector,
    pub rank: usize,
    pub rank_deficient: bool,
}

/// `argmin ‖y − a·x‖₂` of minimum norm via SVD.
///
/// Singular values below `max(rows, cols)·ε·σ_max` are dropped, so rank-deficient
/// inputs return the pseudo-inverse solution instead of failing.
pub fn least_squares(a: &CMatrix, y: &CVector) -> Result<LeastSquares, NumericsError> {
    if a.nrows() == 0 {
        return Err(NumericsError::Empty { rows: a.nrows(), cols: a.ncols() });
    }
    if y.len() != a.nrows() {
        return Err(NumericsError::ShapeMismatch { expected: a.nrows(), got: y.len() });
    }
    if a.ncols() == 0 {
        return Ok(LeastSquares { solution: CVector::zeros(0), rank: 0, rank_deficient: false });
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = a.nrows().max(a.ncols()) as f64 * f64::EPSILON * sigma_max;

    let mut x = CVector::zeros(a.ncols());
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        rank += 1;
        let coef = u.column(i).dotc(y) / s;
        // v_t row i is v_iᴴ, so v_i = conj(row)ᵀ
        for c in 0..a.ncols() {
            x[c] += v_t[(i, c)].conj() * coef;
        }
    }
    Ok(LeastSquares { solution: x, rank, rank_deficient: rank < a.ncols() })
}

/// Residual `y − a·x` of the least-squares fit.
pub fn ls_residual(a: &CMatrix, y: &CVector) -> Result<CVector, NumericsError> {
    let ls = least_squares(a, y)?;
    Ok(y - a * &ls.solution)
}

/// Largest singular value by power iteration on `aᴴa`.
pub fn spectral_norm(a: &CMatrix) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    // Deterministic but generic start vector (never orthogonal to a structured
    // dominant direction in practice).
    let mut v = CVector::from_fn(n, |i, _| {
        let t = i as f64 + 1.0;
        C64::new(1.0 + 0.37 * (0.61 * t).sin(), 0.29 * (1.3 * t).cos())
    });
    let nv = v.norm();
    v /= C64::from(nv);
    let mut estimate = 0.0;
    for _ in 0..20_000 {
        let av = a * &v;
        let mut w = a.ad_mul(&av);
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        // Rayleigh quotient of aᴴa is ‖av‖².
        let next = av.norm_squared();
        w /= C64::from(wn);
        v = w;
        if (next - estimate).abs() <= 1e-15 * next {
            estimate = next;
            break;
        }
        estimate = next;
    }
    estimate.sqrt()
}

/// Eigen-decomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    /// Real eigenvalues, descending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, column `i` pairs with `values[i]`.
    pub vectors: CMatrix,
}

pub fn eig_hermitian(a: &CMatrix) -> Result<HermitianEigen, NumericsError> {
    if a.nrows() != a.ncols() {
        return Err(NumericsError::ShapeMismatch { expected: a.nrows(), got: a.ncols() });
    }
    let scale = a.iter().map(|v| v.norm()).fold(1.0, f64::max);
    let mut deviation = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..=i {
            deviation = deviation.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    if deviation > HERMITIAN_TOLERANCE * scale {
        return Err(NumericsError::NotHermitian { deviation });
    }
    let eig = a.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(a.nrows(), a.nrows(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(HermitianEigen { values, vectors })
}

/// Squared Frobenius norm.
pub fn frobenius_sq(a: &CMatrix) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}
