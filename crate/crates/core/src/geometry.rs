//! Planar locations and the two spatial association structures: the
//! exponential correlation matrix `H(lambda)` and the column-normalized
//! neighbor matrix `W` with its lagged form `I - theta W`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdrError};
use crate::linalg::{SymEigen, EIGEN_FLOOR, EIGEN_JITTER};

/// Planar sampling locations `(s1, s2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coordinates(Vec<[f64; 2]>);

impl Coordinates {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() < 2 {
            return Err(SdrError::InsufficientSamples(format!(
                "{} locations, need at least 2",
                points.len()
            )));
        }
        if let Some(i) = points
            .iter()
            .position(|p| !(p[0].is_finite() && p[1].is_finite()))
        {
            return Err(SdrError::NonFiniteCoordinate(i));
        }
        Ok(Self(points))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.0
    }

    pub fn get(&self, i: usize) -> [f64; 2] {
        self.0[i]
    }

    /// Rows selected by `idx`, in that order. Panics on out-of-range indices.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self(idx.iter().map(|&i| self.0[i]).collect())
    }
}

pub fn euclidean(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Symmetric matrix of pairwise Euclidean distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(DMatrix<f64>);

impl DistanceMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Off-diagonal entries of the upper triangle.
    pub fn upper_values(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for j in 1..n {
            for i in 0..j {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }
}

pub fn pairwise_distances(coords: &Coordinates) -> Result<DistanceMatrix> {
    let n = coords.len();
    let mut dist = DMatrix::zeros(n, n);
    for j in 1..n {
        for i in 0..j {
            let d = euclidean(coords.get(i), coords.get(j));
            if d == 0.0 {
                return Err(SdrError::DuplicatePoints(i, j));
            }
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }
    Ok(DistanceMatrix(dist))
}

/// Exponential correlation matrix `h_ij = exp(-lambda * dist_ij)` together
/// with its eigendecomposition, from which `H^{-1}`, `H^{-1/2}` and
/// `log|H|` are derived.
#[derive(Debug, Clone)]
pub struct CorrelationH {
    lambda: f64,
    h: DMatrix<f64>,
    eigen: SymEigen,
    jitter: f64,
}

impl CorrelationH {
    /// The `lambda -> infinity` limit, i.e. spatially independent errors.
    pub fn identity(n: usize) -> Self {
        Self {
            lambda: f64::INFINITY,
            h: DMatrix::identity(n, n),
            eigen: SymEigen {
                values: nalgebra::DVector::from_element(n, 1.0),
                vectors: DMatrix::identity(n, n),
            },
            jitter: 0.0,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn eigen(&self) -> &SymEigen {
        &self.eigen
    }

    /// Diagonal regularization that was applied (0 when none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn is_identity(&self) -> bool {
        self.lambda.is_infinite()
    }

    pub fn log_det(&self) -> f64 {
        if self.is_identity() {
            0.0
        } else {
            self.eigen.log_det()
        }
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        if self.is_identity() {
            self.h.clone()
        } else {
            self.eigen.inverse()
        }
    }

    pub fn inv_sqrt(&self) -> DMatrix<f64> {
        if self.is_identity() {
            self.h.clone()
        } else {
            self.eigen.inv_sqrt()
        }
    }
}

/// Builds `H(lambda)`. `lambda = +inf` yields the identity matrix.
///
/// If the smallest eigenvalue falls below `1e-10`, `1e-8 * trace(H)/n` is
/// added to the diagonal once; a second violation is an error.
pub fn build_h(dist: &DistanceMatrix, lambda: f64) -> Result<CorrelationH> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(SdrError::NonPositiveLambda(lambda));
    }
    let n = dist.len();
    if lambda.is_infinite() {
        return Ok(CorrelationH::identity(n));
    }
    let mut h = dist.matrix().map(|d| (-lambda * d).exp());
    let mut eigen = SymEigen::new(&h)?;
    let mut jitter = 0.0;
    if eigen.min_value() < EIGEN_FLOOR {
        jitter = EIGEN_JITTER * h.trace() / n as f64;
        for i in 0..n {
            h[(i, i)] += jitter;
        }
        eigen = SymEigen::new(&h)?;
        if eigen.min_value() < EIGEN_FLOOR {
            return Err(SdrError::NearSingularH(eigen.min_value()));
        }
    }
    Ok(CorrelationH {
        lambda,
        h,
        eigen,
        jitter,
    })
}

/// Largest nearest-neighbor distance: the smallest threshold at which
/// every point has a neighbor.
pub fn max_min_distance(dist: &DistanceMatrix) -> f64 {
    let n = dist.len();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| dist.get(i, j))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Column-normalized distance-threshold adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborWeights {
    w: DMatrix<f64>,
    d_max: f64,
}

impl NeighborWeights {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn len(&self) -> usize {
        self.w.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Sites at distance `<= d_max` are neighbors; the diagonal is zero and
/// each column is scaled to sum to one.
pub fn build_w(dist: &DistanceMatrix, d_max: f64) -> Result<NeighborWeights> {
    let n = dist.len();
    let mut w = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut count = 0usize;
        for i in 0..n {
            if i != j && dist.get(i, j) <= d_max {
                w[(i, j)] = 1.0;
                count += 1;
            }
        }
        if count == 0 {
            return Err(SdrError::IsolatedPoint(j, d_max));
        }
        let inv = 1.0 / count as f64;
        w.column_mut(j).scale_mut(inv);
    }
    Ok(NeighborWeights { w, d_max })
}

/// `W_theta = I - theta W` with its log-absolute-determinant.
#[derive(Debug, Clone)]
pub struct LaggedWeights {
    theta: f64,
    w_theta: DMatrix<f64>,
    log_abs_det: f64,
}

impl LaggedWeights {
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w_theta
    }

    pub fn log_abs_det(&self) -> f64 {
        self.log_abs_det
    }

    /// Solves `W_theta E = U` for `E`.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.w_theta
            .clone()
            .lu()
            .solve(rhs)
            .ok_or(SdrError::SingularWTheta(self.theta))
    }
}

pub fn build_w_theta(w: &NeighborWeights, theta: f64) -> Result<LaggedWeights> {
    let n = w.len();
    let w_theta = DMatrix::identity(n, n) - w.matrix() * theta;
    if theta == 0.0 {
        return Ok(LaggedWeights {
            theta,
            w_theta,
            log_abs_det: 0.0,
        });
    }
    let lu = w_theta.clone().lu();
    let u = lu.u();
    let diag = u.diagonal();
    let scale = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !scale.is_finite() || diag.iter().any(|v| v.abs() <= 1e-12 * scale.max(1.0)) {
        return Err(SdrError::SingularWTheta(theta));
    }
    let log_abs_det = diag.iter().map(|v| v.abs().ln()).sum();
    Ok(LaggedWeights {
        theta,
        w_theta,
        log_abs_det,
    })
}
