//! Separable spatial covariance model: errors with covariance `H ⊗ Δ`,
//! `H_ij = exp(-lambda * dist_ij)`.

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSpec;
use crate::error::Result;
use crate::fit::{fit_model, ReductionFit, SpatialModel, Whitening};
use crate::geometry::{CorrelationH, DistanceMatrix};
use crate::linalg::{geometric_grid, median};
use crate::rrr::{TransformTag, WhitenedData};
use crate::sample::SpatialSample;

/// `H^c = I - (1'H^{-1}1)^{-1} 1 1' H^{-1}`.
pub fn h_centering(h: &CorrelationH) -> DMatrix<f64> {
    let n = h.matrix().nrows();
    let g = h.inverse() * DVector::from_element(n, 1.0);
    let s = g.sum();
    DMatrix::identity(n, n) - DMatrix::from_fn(n, n, |_, j| g[j] / s)
}

pub fn sscm_whitening(h: &CorrelationH) -> Whitening {
    let n = h.matrix().nrows();
    if h.is_identity() {
        return Whitening {
            tag: TransformTag::Sscm { lambda: h.lambda() },
            ..Whitening::identity(n)
        };
    }
    let g = h.inverse() * DVector::from_element(n, 1.0);
    let s = g.sum();
    Whitening {
        tag: TransformTag::Sscm { lambda: h.lambda() },
        whitener: Some(h.inv_sqrt()),
        mean_weights: g / s,
        half_log_det_s: 0.5 * h.log_det(),
    }
}

/// `X̄ = H^{-1/2} H^c X`, `F̄ = H^{-1/2} H^c F`.
pub fn sscm_transform(x: &DMatrix<f64>, f: &DMatrix<f64>, h: &CorrelationH) -> Result<WhitenedData> {
    sscm_whitening(h).whiten(x, f)
}

/// 20 geometric points over `[0.1/m, 10/m]`, `m` the median pairwise distance.
pub fn default_lambda_grid(dist: &DistanceMatrix) -> Vec<f64> {
    let m = median(&mut dist.upper_values());
    geometric_grid(0.1 / m, 10.0 / m, 20)
}

pub fn fit_sscm(
    sample: &SpatialSample,
    spec: &BasisSpec,
    d: usize,
    lambda_grid: &[f64],
) -> Result<ReductionFit> {
    fit_model(
        sample,
        spec,
        d,
        &SpatialModel::Sscm {
            lambda_grid: lambda_grid.to_vec(),
        },
    )
}

pub fn reduce_sscm(fit: &ReductionFit, x_new: &DVector<f64>) -> Result<DVector<f64>> {
    fit.reduce(x_new)
}
