//! Profile-likelihood fitting shared by the independent, SSCM and SEM
//! models.
//!
//! Each spatial model whitens the data as `X̄ = T (X - 1 w'X)` where `w` are
//! generalized-least-squares mean weights and `T` is the whitening matrix
//! (`H^{-1/2}` or `W_theta`). Given the spatial parameter everything else is
//! closed form, so the parameter is chosen by maximizing the profile
//! likelihood over a grid.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_f, BasisSpec, FMatrix, FittedBasis};
use crate::error::{Result, SdrError};
use crate::geometry::{build_w, max_min_distance, pairwise_distances, DistanceMatrix, NeighborWeights};
use crate::rrr::{
    loglik, reduce_rows, rrr_all_ranks, rrr_mle, ReductionMetric, RrrEstimate, TransformTag,
    WhitenedData,
};
use crate::sample::SpatialSample;
use crate::{sem, sscm};

/// A whitening transform `M -> T (M - 1 w'M)` plus the log-determinant term
/// it contributes to the likelihood.
#[derive(Debug, Clone)]
pub struct Whitening {
    pub tag: TransformTag,
    /// `None` means `T = I`.
    pub whitener: Option<DMatrix<f64>>,
    /// Mean weights `w`, summing to one.
    pub mean_weights: DVector<f64>,
    /// `(p/2) log|S|` divided by `p`, i.e. `(1/2) log|S|`.
    pub half_log_det_s: f64,
}

impl Whitening {
    /// Plain column centering.
    pub fn identity(n: usize) -> Self {
        Self {
            tag: TransformTag::IdentityCentering,
            whitener: None,
            mean_weights: DVector::from_element(n, 1.0 / n as f64),
            half_log_det_s: 0.0,
        }
    }

    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let means = m.tr_mul(&self.mean_weights);
        let mut centered = m.clone();
        for mut row in centered.row_iter_mut() {
            row -= means.transpose();
        }
        match &self.whitener {
            Some(t) => t * centered,
            None => centered,
        }
    }

    pub fn whiten(&self, x: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<WhitenedData> {
        if x.nrows() != self.mean_weights.len() || f.nrows() != self.mean_weights.len() {
            return Err(SdrError::DimensionMismatch(format!(
                "transform for {} rows applied to {} and {} rows",
                self.mean_weights.len(),
                x.nrows(),
                f.nrows()
            )));
        }
        WhitenedData::new(self.apply(x), self.apply(f), self.tag)
    }

    /// `(p/2) log|S|` for `p` predictors.
    pub fn logdet_s_term(&self, p: usize) -> f64 {
        p as f64 * self.half_log_det_s
    }

    /// `mu = (X' - A B F') w`.
    pub fn mu_hat(&self, x: &DMatrix<f64>, f: &DMatrix<f64>, est: &RrrEstimate) -> DVector<f64> {
        let fitted = f * est.coefficient().transpose();
        (x - fitted).tr_mul(&self.mean_weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Independent,
    Sscm,
    Sem,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Independent => "Ind",
            Self::Sscm => "SSCM",
            Self::Sem => "SEM",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = SdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ind" | "independent" | "pfc" => Ok(Self::Independent),
            "sscm" => Ok(Self::Sscm),
            "sem" => Ok(Self::Sem),
            other => Err(SdrError::InvalidConfig(format!("unknown model '{other}'"))),
        }
    }
}

/// Model plus the grid its spatial parameter is searched over.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialModel {
    Independent,
    /// Exponential correlation; `f64::INFINITY` in the grid means `H = I`.
    Sscm { lambda_grid: Vec<f64> },
    /// Autoregressive errors. `d_max` defaults to the largest
    /// nearest-neighbor distance of the sample.
    Sem {
        theta_grid: Vec<f64>,
        d_max: Option<f64>,
    },
}

impl SpatialModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Independent => ModelKind::Independent,
            Self::Sscm { .. } => ModelKind::Sscm,
            Self::Sem { .. } => ModelKind::Sem,
        }
    }

    /// The model with its default grid for the given sample.
    pub fn with_default_grid(kind: ModelKind, sample: &SpatialSample) -> Result<Self> {
        Ok(match kind {
            ModelKind::Independent => Self::Independent,
            ModelKind::Sscm => Self::Sscm {
                lambda_grid: sscm::default_lambda_grid(&pairwise_distances(sample.coords())?),
            },
            ModelKind::Sem => Self::Sem {
                theta_grid: sem::default_theta_grid(),
                d_max: None,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub param: f64,
    pub loglik: f64,
}

/// A fitted sufficient reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionFit {
    pub model: ModelKind,
    /// `lambda_hat` (SSCM) or `theta_hat` (SEM).
    pub spatial_param: Option<f64>,
    /// Neighbor threshold used for `W` (SEM only).
    pub d_max: Option<f64>,
    pub est: RrrEstimate,
    pub mu_hat: DVector<f64>,
    pub loglik: f64,
    pub grid: Vec<GridPoint>,
    pub basis: FittedBasis,
    #[serde(default)]
    pub metric: ReductionMetric,
}

impl ReductionFit {
    pub fn d(&self) -> usize {
        self.est.d
    }

    pub fn p(&self) -> usize {
        self.est.p()
    }

    pub fn lambda_hat(&self) -> Option<f64> {
        (self.model == ModelKind::Sscm).then_some(self.spatial_param).flatten()
    }

    pub fn theta_hat(&self) -> Option<f64> {
        (self.model == ModelKind::Sem).then_some(self.spatial_param).flatten()
    }

    /// `D^{-1} A` under the fit's reduction metric.
    pub fn projection(&self) -> Result<DMatrix<f64>> {
        self.est.reduction_matrix(self.metric)
    }

    pub fn reduce(&self, x_new: &DVector<f64>) -> Result<DVector<f64>> {
        crate::rrr::reduce_with(x_new, &self.mu_hat, &self.est, self.metric)
    }

    /// Reductions of the rows of `x` (n x p) as an n x d matrix.
    pub fn reduce_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.p() {
            return Err(SdrError::DimensionMismatch(format!(
                "{} predictor columns for a model with p = {}",
                x.ncols(),
                self.p()
            )));
        }
        Ok(reduce_rows(x, &self.mu_hat, &self.projection()?))
    }
}

/// Spatial structure prepared once per sample.
enum Structure {
    Independent(usize),
    Sscm(DistanceMatrix),
    Sem(NeighborWeights),
}

impl Structure {
    fn new(sample: &SpatialSample, model: &SpatialModel) -> Result<Self> {
        Ok(match model {
            SpatialModel::Independent => Self::Independent(sample.n()),
            SpatialModel::Sscm { .. } => Self::Sscm(pairwise_distances(sample.coords())?),
            SpatialModel::Sem { d_max, .. } => {
                let dist = pairwise_distances(sample.coords())?;
                let d_max = d_max.unwrap_or_else(|| max_min_distance(&dist));
                Self::Sem(build_w(&dist, d_max)?)
            }
        })
    }

    fn whitening(&self, param: f64) -> Result<Whitening> {
        match self {
            Self::Independent(n) => Ok(Whitening::identity(*n)),
            Self::Sscm(dist) => Ok(sscm::sscm_whitening(&crate::geometry::build_h(dist, param)?)),
            Self::Sem(w) => Ok(sem::sem_whitening(&crate::geometry::build_w_theta(w, param)?)),
        }
    }

    fn d_max(&self) -> Option<f64> {
        match self {
            Self::Sem(w) => Some(w.d_max()),
            _ => None,
        }
    }
}

/// Grid values in evaluation order, and the order in which ties are broken.
fn grid_of(model: &SpatialModel) -> Result<(Vec<f64>, Vec<usize>)> {
    let grid = match model {
        SpatialModel::Independent => return Ok((vec![f64::NAN], vec![0])),
        SpatialModel::Sscm { lambda_grid } => {
            if let Some(&bad) = lambda_grid.iter().find(|&&l| l.is_nan() || l <= 0.0) {
                return Err(SdrError::InvalidGridValue(bad));
            }
            lambda_grid
        }
        SpatialModel::Sem { theta_grid, .. } => {
            if let Some(&bad) = theta_grid.iter().find(|&&t| !(t.abs() < 1.0)) {
                return Err(SdrError::InvalidGridValue(bad));
            }
            theta_grid
        }
    };
    if grid.is_empty() {
        return Err(SdrError::EmptyGrid);
    }
    let mut order: Vec<usize> = (0..grid.len()).collect();
    match model {
        // Lowest lambda wins ties.
        SpatialModel::Sscm { .. } => order.sort_by(|&a, &b| grid[a].total_cmp(&grid[b])),
        // Smallest |theta| wins ties.
        _ => order.sort_by(|&a, &b| {
            grid[a]
                .abs()
                .total_cmp(&grid[b].abs())
                .then(grid[a].total_cmp(&grid[b]))
        }),
    }
    Ok((grid.clone(), order))
}

fn argmax(values: &[f64], order: &[usize]) -> usize {
    let mut best = order[0];
    for &i in &order[1..] {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

fn prepare(sample: &SpatialSample, spec: &BasisSpec) -> Result<(FMatrix, DMatrix<f64>)> {
    let fm = build_f(sample.y(), spec)?;
    let f = fm.scaled();
    Ok((fm, f))
}

fn spatial_param(model: &SpatialModel, value: f64) -> Option<f64> {
    match model {
        SpatialModel::Independent => None,
        _ => Some(value),
    }
}

/// Fits the model at rank `d`, choosing the spatial parameter by profile
/// likelihood over the model's grid.
pub fn fit_model(
    sample: &SpatialSample,
    spec: &BasisSpec,
    d: usize,
    model: &SpatialModel,
) -> Result<ReductionFit> {
    let (fm, f) = prepare(sample, spec)?;
    let max = sample.p().min(fm.r());
    if d > max {
        return Err(SdrError::RankOutOfRange { d, max });
    }
    let structure = Structure::new(sample, model)?;
    let (grid, order) = grid_of(model)?;
    let p = sample.p();

    let evals: Vec<Result<(f64, Whitening, RrrEstimate)>> = grid
        .par_iter()
        .map(|&param| {
            let wh = structure.whitening(param)?;
            let data = wh.whiten(sample.x(), &f)?;
            let est = rrr_mle(&data, d)?;
            let ll = loglik(&data, &est, wh.logdet_s_term(p))?;
            Ok((ll, wh, est))
        })
        .collect();
    let evals = evals.into_iter().collect::<Result<Vec<_>>>()?;
    let lls: Vec<f64> = evals.iter().map(|e| e.0).collect();
    let best = argmax(&lls, &order);
    let (ll, wh, est) = evals.into_iter().nth(best).expect("grid is nonempty");
    let mu_hat = wh.mu_hat(sample.x(), &f, &est);

    Ok(ReductionFit {
        model: model.kind(),
        spatial_param: spatial_param(model, grid[best]),
        d_max: structure.d_max(),
        est,
        mu_hat,
        loglik: ll,
        grid: match model {
            SpatialModel::Independent => Vec::new(),
            _ => grid
                .iter()
                .zip(&lls)
                .map(|(&param, &loglik)| GridPoint { param, loglik })
                .collect(),
        },
        basis: fm.fitted(),
        metric: ReductionMetric::DeltaHat,
    })
}

/// Profile log-likelihood at every rank: `L_delta` for `delta = 0..=min(p, r)`,
/// each maximized over the spatial grid.
pub fn rank_logliks(sample: &SpatialSample, spec: &BasisSpec, model: &SpatialModel) -> Result<Vec<f64>> {
    Ok(rank_loglik_table(sample, spec, model)?
        .into_iter()
        .map(|row| row.into_iter().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// `table[delta][k]`: log-likelihood at rank `delta` and grid point `k`.
pub fn rank_loglik_table(
    sample: &SpatialSample,
    spec: &BasisSpec,
    model: &SpatialModel,
) -> Result<Vec<Vec<f64>>> {
    let (_, f) = prepare(sample, spec)?;
    let structure = Structure::new(sample, model)?;
    let (grid, _) = grid_of(model)?;
    let p = sample.p();
    let per_param: Vec<Result<Vec<f64>>> = grid
        .par_iter()
        .map(|&param| {
            let wh = structure.whitening(param)?;
            let data = wh.whiten(sample.x(), &f)?;
            let logdet = wh.logdet_s_term(p);
            rrr_all_ranks(&data)?
                .iter()
                .map(|est| loglik(&data, est, logdet))
                .collect()
        })
        .collect();
    let per_param = per_param.into_iter().collect::<Result<Vec<_>>>()?;
    let ranks = per_param[0].len();
    Ok((0..ranks)
        .map(|delta| per_param.iter().map(|row| row[delta]).collect())
        .collect())
}

/// Independent principal fitted components (no spatial structure).
pub fn fit_independent(sample: &SpatialSample, spec: &BasisSpec, d: usize) -> Result<ReductionFit> {
    fit_model(sample, spec, d, &SpatialModel::Independent)
}
