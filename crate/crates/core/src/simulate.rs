//! Data-generating process and replication protocol for simulation studies.
//!
//! Locations are drawn on the unit square, `Y` is a Gaussian random field
//! with a linear trend and spherical covariance, and `X | Y` follows the
//! inverse model with SSCM or SEM errors. Each replication splits the data
//! into training and test parts and scores every requested predictor.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::dimselect::{select_cv, select_ic, select_lr, CvOptions, Criterion};
use crate::error::{Result, SdrError};
use crate::fit::{fit_model, rank_logliks, ModelKind, ReductionFit, SpatialModel};
use crate::geometry::{
    build_h, build_w, build_w_theta, max_min_distance, pairwise_distances, Coordinates,
};
use crate::linalg::numerical_rank;
use crate::predictor::{predict_point, tune_bandwidths, PredictorMode, PredictorSpace, TrainingReference};
use crate::sample::SpatialSample;

/// Share of failed replications at which a method is flagged unstable.
pub const UNSTABLE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationMode {
    /// Independent uniform points on the unit square.
    #[default]
    Uniform,
    /// Regular lattice covering the unit square, filled row by row.
    Grid,
}

/// Gaussian random field with trend `t0 + t1 s1 + t2 s2` and spherical
/// covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrfSpec {
    pub trend: [f64; 3],
    pub sill: f64,
    pub range: f64,
}

impl Default for GrfSpec {
    fn default() -> Self {
        Self {
            trend: [1.0, 0.1, 0.05],
            sill: 1.25,
            range: 2.0,
        }
    }
}

impl GrfSpec {
    /// Spherical covariance at distance `h`.
    pub fn covariance(&self, h: f64) -> f64 {
        if h >= self.range {
            return 0.0;
        }
        let u = h / self.range;
        self.sill * (1.0 - 1.5 * u + 0.5 * u * u * u)
    }

    pub fn mean(&self, s: [f64; 2]) -> f64 {
        self.trend[0] + self.trend[1] * s[0] + self.trend[2] * s[1]
    }
}

fn default_lambda() -> f64 {
    0.1
}

fn default_theta() -> f64 {
    0.8
}

fn default_train_frac() -> f64 {
    0.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    /// Degree of the polynomial basis, used both to generate and to fit.
    pub r: usize,
    /// True rank of `A B`.
    pub d: usize,
    /// Error structure of the generated predictors.
    pub model: ModelKind,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    pub reps: usize,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    pub seed: u64,
    #[serde(default)]
    pub locations: LocationMode,
    #[serde(default)]
    pub grf: GrfSpec,
    /// Grid for fitting SSCM; defaults to the sample-based grid.
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    /// Grid for fitting SEM; defaults to `-0.95..=0.95` by 0.05.
    #[serde(default)]
    pub theta_grid: Option<Vec<f64>>,
}

impl SimConfig {
    /// Table-sized defaults: `n = 400`, `p = 24`, `r = d = 2`.
    pub fn new(model: ModelKind, seed: u64) -> Self {
        Self {
            n: 400,
            p: 24,
            r: 2,
            d: 2,
            model,
            lambda: default_lambda(),
            theta: default_theta(),
            reps: 100,
            train_frac: default_train_frac(),
            seed,
            locations: LocationMode::Uniform,
            grf: GrfSpec::default(),
            lambda_grid: None,
            theta_grid: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SdrError::InvalidConfig(m));
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad(format!("train_frac must lie in (0, 1), got {}", self.train_frac));
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.n < 2 || self.p == 0 || self.r == 0 {
            return bad(format!("invalid sizes n = {}, p = {}, r = {}", self.n, self.p, self.r));
        }
        if self.d > self.r.min(self.p) {
            return Err(SdrError::RankOutOfRange {
                d: self.d,
                max: self.r.min(self.p),
            });
        }
        if !(self.lambda > 0.0) {
            return Err(SdrError::NonPositiveLambda(self.lambda));
        }
        if !(self.theta.abs() < 1.0) {
            return bad(format!("theta must lie in (-1, 1), got {}", self.theta));
        }
        if !(self.grf.sill > 0.0 && self.grf.range > 0.0) {
            return bad("sill and range must be positive".into());
        }
        Ok(())
    }

    pub fn n_train(&self) -> usize {
        ((self.train_frac * self.n as f64).round() as usize).clamp(1, self.n - 1)
    }

    fn fitting_model(&self, kind: ModelKind, train: &SpatialSample) -> Result<SpatialModel> {
        Ok(match (kind, &self.lambda_grid, &self.theta_grid) {
            (ModelKind::Sscm, Some(g), _) => SpatialModel::Sscm {
                lambda_grid: g.clone(),
            },
            (ModelKind::Sem, _, Some(g)) => SpatialModel::Sem {
                theta_grid: g.clone(),
                d_max: None,
            },
            _ => SpatialModel::with_default_grid(kind, train)?,
        })
    }
}

/// `n` points on the unit square.
pub fn sample_locations<R: Rng + ?Sized>(n: usize, mode: LocationMode, rng: &mut R) -> Result<Coordinates> {
    let points = match mode {
        LocationMode::Uniform => (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect(),
        LocationMode::Grid => {
            let side = (n as f64).sqrt().ceil().max(2.0) as usize;
            let step = 1.0 / (side - 1) as f64;
            (0..n)
                .map(|k| [(k % side) as f64 * step, (k / side) as f64 * step])
                .collect()
        }
    };
    Coordinates::new(points)
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Lower Cholesky factor, retried once with `1e-8 trace/n` on the diagonal.
fn jittered_cholesky(m: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let eps = 1e-8 * m.trace() / n as f64;
    match m.clone().cholesky() {
        Some(c) => Some(c.l()),
        None => (m + DMatrix::identity(n, n) * eps).cholesky().map(|c| c.l()),
    }
}

/// One draw of the random field at `coords`.
pub fn simulate_y<R: Rng + ?Sized>(coords: &Coordinates, grf: &GrfSpec, rng: &mut R) -> Result<Vec<f64>> {
    let n = coords.len();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = grf.covariance(crate::geometry::euclidean(coords.get(i), coords.get(j)));
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    let l = jittered_cholesky(c).ok_or(SdrError::CovarianceNotPD)?;
    let z = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
    let field = l * z;
    Ok((0..n).map(|i| grf.mean(coords.get(i)) + field[i]).collect())
}

/// Parameters used to generate the predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub mu: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub delta: DMatrix<f64>,
}

fn full_rank<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    loop {
        let m = standard_normal(rng, rows, cols);
        if numerical_rank(&m, 1e-10) == rows.min(cols) {
            return m;
        }
    }
}

/// Raw powers `y, y^2, ..., y^r`.
pub fn raw_polynomial(y: &[f64], r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(y.len(), r, |i, k| y[i].powi(k as i32 + 1))
}

/// `X = 1 mu' + F (A B)' + E` with SSCM, SEM or independent errors.
pub fn simulate_x<R: Rng + ?Sized>(
    y: &[f64],
    coords: &Coordinates,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<(DMatrix<f64>, TrueParams)> {
    let (n, p) = (y.len(), cfg.p);
    if coords.len() != n {
        return Err(SdrError::DimensionMismatch(format!(
            "{} responses at {} locations",
            n,
            coords.len()
        )));
    }
    let mu = DVector::from_fn(p, |_, _| rng.sample(StandardNormal));
    let a = full_rank(rng, p, cfg.d);
    let b = full_rank(rng, cfg.d, cfg.r);
    let g = standard_normal(rng, p, p);
    let delta = &g * g.transpose() + DMatrix::identity(p, p) * 0.1;

    let l_delta = delta.clone().cholesky().ok_or(SdrError::CovarianceNotPD)?.l();
    let iid = standard_normal(rng, n, p) * l_delta.transpose();
    let e = match cfg.model {
        ModelKind::Independent => iid,
        ModelKind::Sscm => {
            let h = build_h(&pairwise_distances(coords)?, cfg.lambda)?;
            let l = jittered_cholesky(h.matrix().clone()).ok_or(SdrError::CovarianceNotPD)?;
            l * iid
        }
        ModelKind::Sem => {
            let dist = pairwise_distances(coords)?;
            let w = build_w(&dist, max_min_distance(&dist))?;
            build_w_theta(&w, cfg.theta)?.solve(&iid)?
        }
    };
    let f = raw_polynomial(y, cfg.r);
    let mut x = f * (&a * &b).transpose() + e;
    for mut row in x.row_iter_mut() {
        row += mu.transpose();
    }
    Ok((x, TrueParams { mu, a, b, delta }))
}

/// One generated dataset and its train/test split.
#[derive(Debug, Clone)]
pub struct Replication {
    pub index: usize,
    pub sample: SpatialSample,
    pub truth: TrueParams,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Seed handed to fold assignment when the rank is cross-validated.
    pub cv_seed: u64,
}

impl Replication {
    pub fn train_sample(&self) -> SpatialSample {
        self.sample.select(&self.train)
    }

    pub fn test_sample(&self) -> SpatialSample {
        self.sample.select(&self.test)
    }
}

/// Random stream of replication `rep`, independent of how many
/// replications run or in which order.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

pub fn simulate_replication(cfg: &SimConfig, rep: usize) -> Result<Replication> {
    cfg.validate()?;
    let mut rng = replication_rng(cfg.seed, rep);
    let coords = sample_locations(cfg.n, cfg.locations, &mut rng)?;
    let y = simulate_y(&coords, &cfg.grf, &mut rng)?;
    let (x, truth) = simulate_x(&y, &coords, cfg, &mut rng)?;
    let mut idx: Vec<usize> = (0..cfg.n).collect();
    idx.shuffle(&mut rng);
    let (train, test) = idx.split_at(cfg.n_train());
    let (mut train, mut test) = (train.to_vec(), test.to_vec());
    train.sort_unstable();
    test.sort_unstable();
    Ok(Replication {
        index: rep,
        sample: SpatialSample::new(coords, x, y)?,
        truth,
        train,
        test,
        cv_seed: rng.next_u64(),
    })
}

/// How the rank of each fitted reduction is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DPolicy {
    Fixed { d: usize },
    Lr { alpha: f64 },
    Aic,
    Bic,
    Cv { folds: usize },
}

impl std::str::FromStr for DPolicy {
    type Err = SdrError;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(d) = s.parse::<usize>() {
            return Ok(Self::Fixed { d });
        }
        Ok(match s.parse::<Criterion>()? {
            Criterion::Lr => Self::Lr {
                alpha: crate::dimselect::DEFAULT_ALPHA,
            },
            Criterion::Aic => Self::Aic,
            Criterion::Bic => Self::Bic,
            Criterion::CvMpe => Self::Cv {
                folds: crate::dimselect::DEFAULT_FOLDS,
            },
        })
    }
}

/// Rank of the reduction for `model` on `train` under `policy`.
pub fn choose_d(
    train: &SpatialSample,
    spec: &BasisSpec,
    model: &SpatialModel,
    policy: DPolicy,
    cv_seed: u64,
) -> Result<usize> {
    let (p, r, n) = (train.p(), spec.r(), train.n());
    Ok(match policy {
        DPolicy::Fixed { d } => d,
        DPolicy::Lr { alpha } => select_lr(&rank_logliks(train, spec, model)?, p, r, alpha)?.d_star,
        DPolicy::Aic => select_ic(&rank_logliks(train, spec, model)?, p, r, n, Criterion::Aic)?.d_star,
        DPolicy::Bic => select_ic(&rank_logliks(train, spec, model)?, p, r, n, Criterion::Bic)?.d_star,
        DPolicy::Cv { folds } => {
            let options = CvOptions {
                folds,
                seed: cv_seed,
                ..CvOptions::default()
            };
            select_cv(train, model, spec, &options)?.d_star
        }
    })
}

/// Per-replication record of the fitted reductions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    /// Rank used per model label.
    pub d: BTreeMap<String, usize>,
    /// Estimated spatial parameter per model label.
    pub spatial_param: BTreeMap<String, f64>,
    /// Failure messages per method or model label.
    pub errors: BTreeMap<String, String>,
    /// Test predictions that needed the nearest-neighbor fallback.
    pub fallbacks: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// Test MSE per replication; `None` where the method failed.
    pub mse: Vec<Option<f64>>,
    pub mean: Option<f64>,
    /// Sample standard deviation over successful replications.
    pub std: Option<f64>,
    pub failures: usize,
    pub unstable: bool,
}

impl MethodSummary {
    pub fn from_values(method: String, mse: Vec<Option<f64>>) -> Self {
        let ok: Vec<f64> = mse.iter().flatten().copied().collect();
        let failures = mse.len() - ok.len();
        let mean = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
        let std = mean.filter(|_| ok.len() > 1).map(|m| {
            (ok.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (ok.len() - 1) as f64).sqrt()
        });
        let unstable = failures as f64 >= UNSTABLE_FRACTION * mse.len() as f64 && failures > 0;
        Self {
            method,
            mse,
            mean,
            std,
            failures,
            unstable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: SimConfig,
    pub d_policy: DPolicy,
    pub methods: Vec<MethodSummary>,
    pub replications: Vec<ReplicationRecord>,
    pub seeds: Vec<u64>,
}

impl MetricsReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn any_unstable(&self) -> bool {
        self.methods.iter().any(|m| m.unstable)
    }
}

fn test_mse(
    reference: &TrainingReference,
    mode: PredictorMode,
    fit: Option<&ReductionFit>,
    test: &SpatialSample,
) -> Result<(f64, usize)> {
    let bw = tune_bandwidths(reference, mode.kernels)?.bandwidths;
    let queries = match fit {
        Some(fit) => fit.reduce_rows(test.x())?,
        None => test.x().clone(),
    };
    let mut sse = 0.0;
    let mut fallbacks = 0;
    for (i, &y) in test.y().iter().enumerate() {
        let q: Vec<f64> = queries.row(i).iter().copied().collect();
        let pred = predict_point(&q, test.coords().get(i), bw, reference)?;
        sse += (y - pred.y_hat).powi(2);
        fallbacks += usize::from(pred.fallback);
    }
    Ok((sse / test.n() as f64, fallbacks))
}

/// Runs one replication; returns the MSE of every method (in order) and the
/// replication record.
pub fn run_replication(
    cfg: &SimConfig,
    rep: usize,
    methods: &[PredictorMode],
    d_policy: DPolicy,
) -> (Vec<Option<f64>>, ReplicationRecord) {
    let mut record = ReplicationRecord {
        rep,
        d: BTreeMap::new(),
        spatial_param: BTreeMap::new(),
        errors: BTreeMap::new(),
        fallbacks: BTreeMap::new(),
    };
    let data = match simulate_replication(cfg, rep) {
        Ok(data) => data,
        Err(e) => {
            record.errors.insert("data".into(), e.to_string());
            return (vec![None; methods.len()], record);
        }
    };
    let (train, test) = (data.train_sample(), data.test_sample());
    let spec = BasisSpec::polynomial(cfg.r);

    let mut fits: BTreeMap<ModelKind, Result<ReductionFit>> = BTreeMap::new();
    for mode in methods {
        if let Some(kind) = mode.model() {
            fits.entry(kind).or_insert_with(|| {
                let model = cfg.fitting_model(kind, &train)?;
                let d = choose_d(&train, &spec, &model, d_policy, data.cv_seed)?;
                fit_model(&train, &spec, d, &model)
            });
        }
    }
    for (kind, fit) in &fits {
        match fit {
            Ok(fit) => {
                record.d.insert(kind.label().into(), fit.d());
                if let Some(v) = fit.spatial_param {
                    record.spatial_param.insert(kind.label().into(), v);
                }
            }
            Err(e) => {
                record.errors.insert(kind.label().into(), e.to_string());
            }
        }
    }

    let mse = methods
        .iter()
        .map(|&mode| {
            let outcome = match mode.space {
                PredictorSpace::Full => test_mse(&TrainingReference::full(&train), mode, None, &test),
                PredictorSpace::Reduced(kind) => match &fits[&kind] {
                    Ok(fit) => TrainingReference::reduced(fit, &train)
                        .and_then(|r| test_mse(&r, mode, Some(fit), &test)),
                    Err(e) => Err(e.clone()),
                },
            };
            match outcome {
                Ok((mse, fallbacks)) => {
                    if fallbacks > 0 {
                        record.fallbacks.insert(mode.to_string(), fallbacks);
                    }
                    Some(mse)
                }
                Err(e) => {
                    record.errors.insert(mode.to_string(), e.to_string());
                    None
                }
            }
        })
        .collect();
    (mse, record)
}

/// Runs every replication and summarizes the test MSE of each method.
pub fn run_experiment(cfg: &SimConfig, methods: &[PredictorMode], d_policy: DPolicy) -> Result<MetricsReport> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(SdrError::InvalidConfig("no methods requested".into()));
    }
    if let DPolicy::Fixed { d } = d_policy {
        let max = cfg.r.min(cfg.p);
        if d > max {
            return Err(SdrError::RankOutOfRange { d, max });
        }
    }
    let results: Vec<(Vec<Option<f64>>, ReplicationRecord)> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replication(cfg, rep, methods, d_policy))
        .collect();
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(k, mode)| MethodSummary::from_values(mode.to_string(), results.iter().map(|r| r.0[k]).collect()))
        .collect();
    Ok(MetricsReport {
        config: cfg.clone(),
        d_policy,
        methods: summaries,
        replications: results.into_iter().map(|r| r.1).collect(),
        seeds: vec![cfg.seed],
    })
}
