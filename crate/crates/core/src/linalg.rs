//! Dense kernels behind the certification pipeline.
//!
//! All rank decisions go through the singular value decomposition with the
//! threshold [`rank_tolerance`]. Matrices here are small (dimensions in the
//! dozens at most), so everything is dense.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("matrix is not symmetric (deviation {deviation:e})")]
    Asymmetric { deviation: f64 },
}

/// Above this row count the Gram determinant is accumulated in log space.
const LOG_DET_ROWS: usize = 20;

/// `1e-10 * σ₁ * max(r, c)`: singular values at or below this count as zero.
pub fn rank_tolerance(sigma_max: f64, rows: usize, cols: usize) -> f64 {
    1e-10 * sigma_max * rows.max(cols) as f64
}

struct Decomposition {
    singular_values: Vec<f64>,
    u: DMatrix<f64>,
    v_t: DMatrix<f64>,
}

fn decompose(m: &DMatrix<f64>) -> Decomposition {
    let svd = SVD::new(m.clone(), true, true);
    Decomposition {
        singular_values: svd.singular_values.iter().copied().collect(),
        u: svd.u.expect("u requested"),
        v_t: svd.v_t.expect("v_t requested"),
    }
}

/// Singular values of `m` in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .collect()
}

/// Full-row-rank diagnostics of an `r × c` matrix `M`. A tall matrix
/// (`r > c`) has `det(M Mᵀ) = 0` and rank at most `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramReport {
    pub rows: usize,
    pub cols: usize,
    /// Descending, non-negative.
    pub singular_values: Vec<f64>,
    /// `det(M Mᵀ) = Π σᵢ²`. May underflow to zero or overflow for many rows;
    /// `log_det` is authoritative then.
    pub det: f64,
    /// `ln det(M Mᵀ)`, `-∞` when singular. The determinant of a Gram matrix
    /// is never negative, so no sign is carried.
    pub log_det: f64,
    /// `σ₁`, the spectral norm of `M`.
    pub spectral_norm: f64,
    pub rank: usize,
    pub rank_tol: f64,
}

impl GramReport {
    pub fn full_row_rank(&self) -> bool {
        self.rank == self.rows
    }

    /// Spectral norm of the Gram matrix itself, `σ₁²`.
    pub fn gram_norm(&self) -> f64 {
        self.spectral_norm * self.spectral_norm
    }
}

/// Computes `det(M Mᵀ)` from the singular values of `M`, without forming
/// `M Mᵀ`.
pub fn gram_det(m: &DMatrix<f64>) -> Result<GramReport, LinalgError> {
    let (rows, cols) = m.shape();
    let sv = singular_values(m);
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    let rank_tol = rank_tolerance(sigma_max, rows, cols);
    let rank = sv.iter().filter(|&&s| s > rank_tol).count();
    let (det, log_det) = if rows > cols {
        (0.0, f64::NEG_INFINITY)
    } else if rows > LOG_DET_ROWS {
        let log_det: f64 = sv.iter().map(|s| 2.0 * s.ln()).sum();
        (log_det.exp(), log_det)
    } else {
        let det: f64 = sv.iter().map(|s| s * s).product();
        (det, det.ln())
    };
    Ok(GramReport {
        rows,
        cols,
        singular_values: sv,
        det,
        log_det,
        spectral_norm: sigma_max,
        rank,
        rank_tol,
    })
}

/// Uniform bound `L^(p-1) / K` on `‖A⁻¹‖` for any `p × p` matrix `A` with
/// `det A ≥ K` and `‖A‖ ≤ L`.
///
/// The smallest singular value satisfies `σ_p ≥ K / Π_{i<p} σᵢ ≥ K / L^(p-1)`,
/// and `‖A⁻¹‖ = 1 / σ_p`.
pub fn inverse_norm_bound(det_lower: f64, norm_upper: f64, p: usize) -> Result<f64, LinalgError> {
    if !(det_lower > 0.0) {
        return Err(LinalgError::NonPositive {
            name: "determinant lower bound",
            value: det_lower,
        });
    }
    if !(norm_upper > 0.0) {
        return Err(LinalgError::NonPositive {
            name: "norm upper bound",
            value: norm_upper,
        });
    }
    if p == 0 {
        return Err(LinalgError::Shape("dimension must be at least 1".into()));
    }
    Ok(norm_upper.powi(p as i32 - 1) / det_lower)
}

/// Minimal-norm least-squares solution of `M x ≈ b` through the SVD
/// pseudo-inverse.
///
/// Singular values at or below `tol_rank` (default [`rank_tolerance`]) are
/// dropped. With full row rank this is `Mᵀ (M Mᵀ)⁻¹ b`.
pub fn min_norm_lsq(
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    tol_rank: Option<f64>,
) -> Result<DVector<f64>, LinalgError> {
    let (rows, cols) = m.shape();
    if b.len() != rows {
        return Err(LinalgError::Shape(format!(
            "right-hand side has {} entries for a {rows}x{cols} matrix",
            b.len()
        )));
    }
    if rows == 0 || cols == 0 {
        return Ok(DVector::zeros(cols));
    }
    let dec = decompose(m);
    let tol = tol_rank
        .unwrap_or_else(|| rank_tolerance(dec.singular_values[0], rows, cols));
    let mut x = DVector::zeros(cols);
    for (i, &s) in dec.singular_values.iter().enumerate() {
        if s <= tol {
            break;
        }
        let coef = dec.u.column(i).dot(b) / s;
        x += dec.v_t.row(i).transpose() * coef;
    }
    Ok(x)
}

/// Orthonormal basis (as columns, `c × k`) of the null space of `M`.
///
/// `k = c - rank`; the basis is empty (`c × 0`) when `M` has full column
/// rank, and the identity when `M` has no rows.
pub fn nullspace_basis(m: &DMatrix<f64>, tol_rank: Option<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 {
        return DMatrix::identity(cols, cols);
    }
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Wide matrices are padded with zero rows so the SVD yields a full V.
    let square = if rows < cols {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.view_mut((0, 0), (rows, cols)).copy_from(m);
        padded
    } else {
        m.clone()
    };
    let dec = decompose(&square);
    let tol = tol_rank
        .unwrap_or_else(|| rank_tolerance(dec.singular_values[0], rows, cols));
    let rank = dec.singular_values.iter().filter(|&&s| s > tol).count();
    let mut basis = DMatrix::zeros(cols, cols - rank);
    for (k, i) in (rank..cols).enumerate() {
        basis.set_column(k, &dec.v_t.row(i).transpose());
    }
    basis
}

/// Largest eigenvalue of a symmetric matrix; `-∞` for the empty matrix.
pub fn max_eig_sym(s: &DMatrix<f64>) -> Result<f64, LinalgError> {
    let (r, c) = s.shape();
    if r != c {
        return Err(LinalgError::Shape(format!("{r}x{c} matrix is not square")));
    }
    if r == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let deviation = (s - s.transpose()).amax();
    if deviation > 1e-12 * s.norm() {
        return Err(LinalgError::Asymmetric { deviation });
    }
    let sym = (s + s.transpose()) * 0.5;
    Ok(SymmetricEigen::new(sym).eigenvalues.max())
}
