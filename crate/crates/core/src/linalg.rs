//! Dense symmetric linear algebra shared by the estimators.
//!
//! Every matrix function of a symmetric matrix (inverse, square root,
//! inverse square root, log-determinant) goes through [`SymEigen`], which
//! fixes the ordering and sign conventions so fits are reproducible.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SdrError};

/// Eigenvalue floor below which a symmetric matrix is treated as singular.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Relative jitter added once when the floor is violated.
pub const EIGEN_JITTER: f64 = 1e-8;

/// Eigendecomposition of a symmetric matrix with eigenvalues in descending
/// order and each eigenvector's largest-magnitude entry made positive.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(SdrError::DimensionMismatch(format!(
                "eigendecomposition of a {}x{} matrix",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        if n == 0 {
            return Ok(Self {
                values: DVector::zeros(0),
                vectors: DMatrix::zeros(0, 0),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(SdrError::EigenFailure("non-finite matrix entry".into()));
        }
        let sym = (m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 100_000)
            .ok_or_else(|| SdrError::EigenFailure("symmetric QR did not converge".into()))?;

        // Stable sort keeps the original index order among tied eigenvalues.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            let mut col = eig.eigenvectors.column(src).clone_owned();
            let mut pivot = 0;
            for i in 1..n {
                if col[i].abs() > col[pivot].abs() {
                    pivot = i;
                }
            }
            if col[pivot] < 0.0 {
                col.neg_mut();
            }
            vectors.set_column(dst, &col);
        }
        Ok(Self { values, vectors })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `Q diag(f(values)) Q^T`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            self.vectors[(i, j)] * f(self.values[j])
        });
        &scaled * self.vectors.transpose()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.map(|v| 1.0 / v)
    }

    pub fn sqrt(&self) -> DMatrix<f64> {
        self.map(f64::sqrt)
    }

    pub fn inv_sqrt(&self) -> DMatrix<f64> {
        self.map(|v| 1.0 / v.sqrt())
    }

    pub fn log_det(&self) -> f64 {
        self.values.iter().map(|v| v.ln()).sum()
    }

    fn add_diagonal(&mut self, eps: f64) {
        self.values.add_scalar_mut(eps);
    }
}

/// Eigendecomposition of a matrix that must be positive definite.
///
/// When the smallest eigenvalue is below [`EIGEN_FLOOR`] the matrix is
/// regularized once by `jitter * I` and rechecked; `jitter` defaults to
/// `EIGEN_JITTER * mean(eigenvalues)`.
pub fn spd_eigen(m: &DMatrix<f64>, jitter: Option<f64>) -> Option<SymEigen> {
    let mut eig = SymEigen::new(m).ok()?;
    if eig.dim() == 0 || eig.min_value() >= EIGEN_FLOOR {
        return Some(eig);
    }
    let eps = jitter.unwrap_or_else(|| EIGEN_JITTER * eig.values.mean());
    if !(eps.is_finite() && eps > 0.0) {
        return None;
    }
    // Adding eps*I shifts the spectrum without changing eigenvectors.
    eig.add_diagonal(eps);
    (eig.min_value() >= EIGEN_FLOOR).then_some(eig)
}

/// `log|m|` of a symmetric positive definite matrix via Cholesky.
pub fn chol_log_det(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    Some(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Numerical rank from singular values relative to the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// `count` geometrically spaced points from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let ratio = (hi / lo).ln() / (count - 1) as f64;
            (0..count).map(|k| lo * (ratio * k as f64).exp()).collect()
        }
    }
}

/// `count` evenly spaced points from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (count - 1) as f64;
            (0..count).map(|k| lo + step * k as f64).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigen_descending_with_sign_convention() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]);
        let eig = SymEigen::new(&m).unwrap();
        assert!(eig.values[0] >= eig.values[1] && eig.values[1] >= eig.values[2]);
        for j in 0..3 {
            let col = eig.vectors.column(j);
            let pivot = col.iamax();
            assert!(col[pivot] > 0.0);
        }
        let back = eig.map(|v| v);
        assert_relative_eq!(back, m, epsilon = 1e-12);
    }

    #[test]
    fn tied_eigenvalues_keep_index_order() {
        let eig = SymEigen::new(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(eig.vectors, DMatrix::identity(3, 3));
    }

    #[test]
    fn inverse_square_root_round_trip() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let eig = SymEigen::new(&m).unwrap();
        let s = eig.sqrt();
        let is = eig.inv_sqrt();
        assert_relative_eq!(&s * &s, m, epsilon = 1e-12);
        assert_relative_eq!(&is * &s, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert_relative_eq!(eig.log_det(), chol_log_det(&m).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn jitter_rescues_semidefinite_once() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(spd_eigen(&m, None).is_some());
        assert!(spd_eigen(&DMatrix::zeros(2, 2), None).is_none());
    }

    #[test]
    fn grids() {
        let g = geometric_grid(0.1, 10.0, 3);
        assert_relative_eq!(g[1], 1.0, epsilon = 1e-12);
        assert_eq!(linear_grid(-1.0, 1.0, 5), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }
}
