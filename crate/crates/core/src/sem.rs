//! Spatial autoregressive error model: `E = theta W E + U`, so that
//! `W_theta E` has i.i.d. rows with covariance `Δ`.
//!
//! `W` is column-normalized and generally asymmetric, so the whitening is
//! left multiplication by `W_theta` and the mean weights use
//! `W_theta' W_theta`.

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSpec;
use crate::error::Result;
use crate::fit::{fit_model, ReductionFit, SpatialModel, Whitening};
use crate::geometry::LaggedWeights;
use crate::rrr::{TransformTag, WhitenedData};
use crate::sample::SpatialSample;

fn gram_ones(wt: &LaggedWeights) -> DVector<f64> {
    let n = wt.matrix().nrows();
    let ones = DVector::from_element(n, 1.0);
    wt.matrix().tr_mul(&(wt.matrix() * ones))
}

/// `W^c_theta = I - (1'W2 1)^{-1} 1 1' W2` with `W2 = W_theta' W_theta`.
pub fn w_centering(wt: &LaggedWeights) -> DMatrix<f64> {
    let n = wt.matrix().nrows();
    let g = gram_ones(wt);
    let s = g.sum();
    DMatrix::identity(n, n) - DMatrix::from_fn(n, n, |_, j| g[j] / s)
}

pub fn sem_whitening(wt: &LaggedWeights) -> Whitening {
    let n = wt.matrix().nrows();
    let tag = TransformTag::Sem { theta: wt.theta() };
    if wt.theta() == 0.0 {
        return Whitening {
            tag,
            ..Whitening::identity(n)
        };
    }
    let g = gram_ones(wt);
    let s = g.sum();
    Whitening {
        tag,
        whitener: Some(wt.matrix().clone()),
        mean_weights: g / s,
        // S = (W_theta' W_theta)^{-1}, so (1/2) log|S| = -log|det W_theta|.
        half_log_det_s: -wt.log_abs_det(),
    }
}

/// `X̄ = W_theta W^c_theta X`, `F̄ = W_theta W^c_theta F`.
pub fn sem_transform(x: &DMatrix<f64>, f: &DMatrix<f64>, wt: &LaggedWeights) -> Result<WhitenedData> {
    sem_whitening(wt).whiten(x, f)
}

/// `-0.95, -0.90, ..., 0.95`.
pub fn default_theta_grid() -> Vec<f64> {
    (-19..=19).map(|k| k as f64 * 0.05).collect()
}

pub fn fit_sem(
    sample: &SpatialSample,
    spec: &BasisSpec,
    d: usize,
    theta_grid: &[f64],
) -> Result<ReductionFit> {
    fit_model(
        sample,
        spec,
        d,
        &SpatialModel::Sem {
            theta_grid: theta_grid.to_vec(),
            d_max: None,
        },
    )
}

pub fn reduce_sem(fit: &ReductionFit, x_new: &DVector<f64>) -> Result<DVector<f64>> {
    fit.reduce(x_new)
}
