//! Whitened reduced-rank maximum likelihood.
//!
//! Once the spatial structure has been profiled out, both spatial models
//! reduce to an i.i.d. reduced-rank regression of `X̄` on `F̄`:
//!
//! ```text
//! C_ls    = S_xf S_ff^{-1}
//! D_ls    = (1/n) (X̄ - F̄ C_ls')' (X̄ - F̄ C_ls')
//! Sigma   = D_ls^{-1/2} S_xf S_ff^{-1} S_fx D_ls^{-1/2}
//! A       = D_ls^{1/2} V_d
//! B       = V_d' D_ls^{-1/2} C_ls
//! D       = (1/n) (X̄' - A B F̄') (X̄' - A B F̄')'
//! ```
//!
//! where `V_d` holds the leading `d` eigenvectors of `Sigma`. With this
//! factorization `A B = C_ls` at full rank, and `D^{-1} A` spans
//! `D_ls^{-1/2} V_d`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdrError};
use crate::linalg::{spd_eigen, SymEigen};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Which transform produced the whitened data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformTag {
    IdentityCentering,
    Sscm { lambda: f64 },
    Sem { theta: f64 },
}

/// Transformed predictors `X̄` (n x p) and basis `F̄` (n x r).
#[derive(Debug, Clone)]
pub struct WhitenedData {
    x_bar: DMatrix<f64>,
    f_bar: DMatrix<f64>,
    tag: TransformTag,
}

impl WhitenedData {
    pub fn new(x_bar: DMatrix<f64>, f_bar: DMatrix<f64>, tag: TransformTag) -> Result<Self> {
        let (n, p, r) = (x_bar.nrows(), x_bar.ncols(), f_bar.ncols());
        if f_bar.nrows() != n {
            return Err(SdrError::DimensionMismatch(format!(
                "X has {n} rows, F has {}",
                f_bar.nrows()
            )));
        }
        if n <= p + r {
            return Err(SdrError::InsufficientSamples(format!(
                "n = {n} must exceed p + r = {}",
                p + r
            )));
        }
        Ok(Self { x_bar, f_bar, tag })
    }

    pub fn x_bar(&self) -> &DMatrix<f64> {
        &self.x_bar
    }

    pub fn f_bar(&self) -> &DMatrix<f64> {
        &self.f_bar
    }

    pub fn tag(&self) -> TransformTag {
        self.tag
    }

    pub fn n(&self) -> usize {
        self.x_bar.nrows()
    }

    pub fn p(&self) -> usize {
        self.x_bar.ncols()
    }

    pub fn r(&self) -> usize {
        self.f_bar.ncols()
    }

    pub fn max_rank(&self) -> usize {
        self.p().min(self.r())
    }
}

/// Full-rank least squares fit of `X̄` on `F̄`.
#[derive(Debug, Clone)]
pub struct LsFit {
    /// `p x r`.
    pub c_ls: DMatrix<f64>,
    /// `p x p`, with the jitter policy applied.
    pub delta_ls: DMatrix<f64>,
    /// `(1/n) X̄'F̄`.
    pub sigma_xf: DMatrix<f64>,
    /// `(1/n) F̄'F̄`.
    pub sigma_ff: DMatrix<f64>,
    delta_ls_eigen: SymEigen,
}

pub fn ls_fit(data: &WhitenedData) -> Result<LsFit> {
    let n = data.n() as f64;
    let sigma_xf = data.x_bar.tr_mul(&data.f_bar) / n;
    let sigma_ff = data.f_bar.tr_mul(&data.f_bar) / n;
    let chol = sigma_ff.clone().cholesky().ok_or(SdrError::SingularFF)?;
    // C_ls' = S_ff^{-1} S_fx
    let c_ls = chol.solve(&sigma_xf.transpose()).transpose();
    let resid = &data.x_bar - &data.f_bar * c_ls.transpose();
    let raw = resid.tr_mul(&resid) / n;
    let eigen = spd_eigen(&raw, None).ok_or(SdrError::SingularDeltaLS)?;
    let delta_ls = eigen.map(|v| v);
    Ok(LsFit {
        c_ls,
        delta_ls,
        sigma_xf,
        sigma_ff,
        delta_ls_eigen: eigen,
    })
}

/// Maximum likelihood estimates at rank `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrrEstimate {
    /// `p x d`.
    pub a_hat: DMatrix<f64>,
    /// `d x r`.
    pub b_hat: DMatrix<f64>,
    pub delta_hat: DMatrix<f64>,
    pub delta_ls: DMatrix<f64>,
    /// The `min(p, r)` leading eigenvalues of `Sigma`, descending.
    pub eigvals: Vec<f64>,
    pub d: usize,
}

/// Which covariance whitens the reduction `A' D^{-1} (x - mu)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionMetric {
    /// The rank-`d` residual covariance.
    #[default]
    DeltaHat,
    /// The full-rank least squares residual covariance.
    DeltaLs,
}

impl RrrEstimate {
    pub fn p(&self) -> usize {
        self.a_hat.nrows()
    }

    /// `A B`, the rank-`d` coefficient matrix (`p x r`).
    pub fn coefficient(&self) -> DMatrix<f64> {
        &self.a_hat * &self.b_hat
    }

    /// `D^{-1} A` (`p x d`), the linear map applied to centered predictors.
    pub fn reduction_matrix(&self, metric: ReductionMetric) -> Result<DMatrix<f64>> {
        let cov = match metric {
            ReductionMetric::DeltaHat => &self.delta_hat,
            ReductionMetric::DeltaLs => &self.delta_ls,
        };
        let chol = cov.clone().cholesky().ok_or(SdrError::SingularDeltaHat)?;
        Ok(chol.solve(&self.a_hat))
    }
}

/// Spectral pieces shared by every rank.
struct Spectrum {
    ls: LsFit,
    inv_sqrt: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    eigen: SymEigen,
}

fn spectrum(data: &WhitenedData) -> Result<Spectrum> {
    let ls = ls_fit(data)?;
    let inv_sqrt = ls.delta_ls_eigen.inv_sqrt();
    let sqrt = ls.delta_ls_eigen.sqrt();
    // S_xf S_ff^{-1} S_fx = C_ls S_fx
    let m = &ls.c_ls * ls.sigma_xf.transpose();
    let sigma = &inv_sqrt * m * &inv_sqrt;
    let eigen = SymEigen::new(&sigma)?;
    Ok(Spectrum {
        ls,
        inv_sqrt,
        sqrt,
        eigen,
    })
}

fn estimate_at(data: &WhitenedData, sp: &Spectrum, d: usize) -> RrrEstimate {
    let p = data.p();
    let n = data.n() as f64;
    let v = sp.eigen.vectors.columns(0, d).clone_owned();
    let a_hat = &sp.sqrt * &v;
    let b_hat = v.transpose() * &sp.inv_sqrt * &sp.ls.c_ls;
    let resid = &data.x_bar - &data.f_bar * (&a_hat * &b_hat).transpose();
    let mut delta_hat = resid.tr_mul(&resid) / n;
    delta_hat = (&delta_hat + delta_hat.transpose()) * 0.5;
    let eigvals = sp
        .eigen
        .values
        .iter()
        .take(data.max_rank())
        .map(|v| v.max(0.0))
        .collect();
    debug_assert_eq!(a_hat.shape(), (p, d));
    RrrEstimate {
        a_hat,
        b_hat,
        delta_hat,
        delta_ls: sp.ls.delta_ls.clone(),
        eigvals,
        d,
    }
}

pub fn rrr_mle(data: &WhitenedData, d: usize) -> Result<RrrEstimate> {
    if d > data.max_rank() {
        return Err(SdrError::RankOutOfRange {
            d,
            max: data.max_rank(),
        });
    }
    let sp = spectrum(data)?;
    Ok(estimate_at(data, &sp, d))
}

/// Estimates for every rank `0..=min(p, r)` from a single decomposition.
pub fn rrr_all_ranks(data: &WhitenedData) -> Result<Vec<RrrEstimate>> {
    let sp = spectrum(data)?;
    Ok((0..=data.max_rank())
        .map(|d| estimate_at(data, &sp, d))
        .collect())
}

/// Maximized Gaussian log-likelihood
///
/// `-(np/2) log 2pi - logdet_s_term - (n/2) log|D| - 1/2 tr(R D^{-1} R')`
/// with `R = X̄ - F̄ B' A'`. The caller supplies `(p/2) log|S|` of the
/// spatial association matrix.
pub fn loglik(data: &WhitenedData, est: &RrrEstimate, logdet_s_term: f64) -> Result<f64> {
    let (n, p) = (data.n() as f64, data.p() as f64);
    if est.p() != data.p() || est.b_hat.ncols() != data.r() {
        return Err(SdrError::DimensionMismatch(
            "estimate does not match data".into(),
        ));
    }
    let resid = &data.x_bar - &data.f_bar * (&est.a_hat * &est.b_hat).transpose();
    let chol = est
        .delta_hat
        .clone()
        .cholesky()
        .ok_or(SdrError::SingularDeltaHat)?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let z = chol
        .l()
        .solve_lower_triangular(&resid.transpose())
        .ok_or(SdrError::SingularDeltaHat)?;
    let trace = z.norm_squared();
    let value = -0.5 * n * p * LN_2PI - logdet_s_term - 0.5 * n * log_det - 0.5 * trace;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(SdrError::NonFiniteLoglik)
    }
}

/// `A' D^{-1} (x_new - mu_hat)`.
pub fn reduce(x_new: &DVector<f64>, mu_hat: &DVector<f64>, est: &RrrEstimate) -> Result<DVector<f64>> {
    reduce_with(x_new, mu_hat, est, ReductionMetric::DeltaHat)
}

pub fn reduce_with(
    x_new: &DVector<f64>,
    mu_hat: &DVector<f64>,
    est: &RrrEstimate,
    metric: ReductionMetric,
) -> Result<DVector<f64>> {
    if x_new.len() != est.p() || mu_hat.len() != est.p() {
        return Err(SdrError::DimensionMismatch(format!(
            "predictor of length {} for a model with p = {}",
            x_new.len(),
            est.p()
        )));
    }
    let m = est.reduction_matrix(metric)?;
    Ok(m.tr_mul(&(x_new - mu_hat)))
}

/// Reductions of every row of `x` (n x p), returned as n x d.
pub fn reduce_rows(
    x: &DMatrix<f64>,
    mu_hat: &DVector<f64>,
    projection: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu_hat.transpose();
    }
    centered * projection
}
