use std::fmt;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spatial_sdr::dimselect::{select_cv, select_ic, select_lr, CvOptions, DimSelection};
use spatial_sdr::fit::rank_logliks;
use spatial_sdr::geometry::pairwise_distances;
use spatial_sdr::linalg::{geometric_grid, linear_grid, median};
use spatial_sdr::predictor::{predict_point, tune_bandwidths, PredictorSpace};
use spatial_sdr::simulate::{run_experiment, simulate_replication, LocationMode};
use spatial_sdr::{
    fit_model, BasisSpec, Bandwidths, Criterion, DPolicy, Kernels, MetricsReport, ModelKind, PredictorConfig,
    PredictorMode, SimConfig, SpatialModel, SpatialSample,
};

use crate::error::{CliError, CliResult, Stage};
use crate::io::{atomic_write, dataset_csv, read_dataset, read_named, Response};
use crate::model_file::{ModelFile, StoredBandwidths};

#[derive(Debug, Parser)]
#[command(name = "spsdr", version, about = "Sufficient dimension reduction for spatial regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a reduction to a dataset and write a model file.
    Fit(FitArgs),
    /// Predict responses at new locations from a model file.
    Predict(PredictArgs),
    /// Run the simulation experiment and write a metrics report.
    Simulate(SimulateArgs),
    /// Score a prediction file against observed responses.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("rank").required(true).args(["d", "select_d"])))]
pub struct FitArgs {
    /// Training CSV with columns s1, s2, y, x1 .. xp.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_model)]
    pub model: ModelKind,
    /// Degree of the polynomial basis.
    #[arg(long, default_value_t = 2)]
    pub r: usize,
    /// Fixed rank of the reduction.
    #[arg(long)]
    pub d: Option<usize>,
    /// Choose the rank with a criterion (lr, aic, bic or cv).
    #[arg(long, value_parser = parse_criterion)]
    pub select_d: Option<Criterion>,
    /// Level of the sequential likelihood ratio tests.
    #[arg(long, default_value_t = spatial_sdr::dimselect::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Folds for cross-validated rank selection.
    #[arg(long, default_value_t = spatial_sdr::dimselect::DEFAULT_FOLDS)]
    pub folds: usize,
    /// Smallest lambda (sscm) or theta (sem) on the search grid.
    #[arg(long, allow_negative_numbers = true)]
    pub grid_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub grid_max: Option<f64>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Query CSV with columns s1, s2, x1 .. xp (a y column is ignored).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub kernels: u8,
    /// Use the raw predictors instead of the reduction.
    #[arg(long)]
    pub full: bool,
    /// Choose bandwidths by leave-one-out and store them in the model file.
    #[arg(long, conflicts_with_all = ["h1", "h2"])]
    pub tune_bandwidths: bool,
    #[arg(long)]
    pub h1: Option<f64>,
    #[arg(long, requires = "h1")]
    pub h2: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Locations {
    Uniform,
    Grid,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Error structure of the generated predictors (sscm or sem).
    #[arg(long, value_parser = parse_model)]
    pub model: ModelKind,
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    #[arg(long, default_value_t = 24)]
    pub p: usize,
    #[arg(long, default_value_t = 2)]
    pub r: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.8, allow_negative_numbers = true)]
    pub theta: f64,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.7)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Locations::Uniform)]
    pub locations: Locations,
    /// Comma-separated predictor modes such as 2k.SEM,1k.FULL, or `all`.
    #[arg(long, default_value = "all")]
    pub methods: String,
    /// Rank policy: a fixed integer, lr, aic, bic or cv. Defaults to --d.
    #[arg(long, value_parser = parse_policy)]
    pub d_policy: Option<DPolicy>,
    #[arg(long, default_value_t = spatial_sdr::dimselect::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = spatial_sdr::dimselect::DEFAULT_FOLDS)]
    pub folds: usize,
    /// Fail with exit code 3 when a method fails in too many replications.
    #[arg(long)]
    pub strict: bool,
    /// Report path (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for per-replication train and test CSVs.
    #[arg(long)]
    pub datasets: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction CSV with columns s1, s2, y_hat.
    #[arg(long)]
    pub predictions: PathBuf,
    /// CSV with columns s1, s2, y, in the same row order.
    #[arg(long)]
    pub truth: PathBuf,
    /// Metrics path (JSON); printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: spatial_sdr::SdrError| e.to_string())
}

fn parse_criterion(s: &str) -> Result<Criterion, String> {
    s.parse().map_err(|e: spatial_sdr::SdrError| e.to_string())
}

fn parse_policy(s: &str) -> Result<DPolicy, String> {
    s.parse().map_err(|e: spatial_sdr::SdrError| e.to_string())
}

pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Fit(args) => cmd_fit(&args).map(|s| s.to_string()),
        Command::Predict(args) => cmd_predict(&args).map(|s| s.to_string()),
        Command::Simulate(args) => cmd_simulate(&args).map(|r| summary_table(&r)),
        Command::Evaluate(args) => {
            let report = cmd_evaluate(&args)?;
            let json = to_json(&report)?;
            Ok(match args.out {
                Some(_) => format!("mse {}\nrmse {}", report.mse, report.rmse),
                None => json,
            })
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::numerical("write", e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Search grid for the spatial parameter from the grid flags; the model's
/// default grid when none are given.
pub fn spatial_model(
    kind: ModelKind,
    sample: &SpatialSample,
    min: Option<f64>,
    max: Option<f64>,
    size: Option<usize>,
) -> CliResult<SpatialModel> {
    if min.is_none() && max.is_none() && size.is_none() {
        return SpatialModel::with_default_grid(kind, sample).stage("grid");
    }
    if size == Some(0) {
        return Err(CliError::input("grid", "--grid-size must be positive"));
    }
    let check = |lo: f64, hi: f64| {
        if lo > hi {
            Err(CliError::input("grid", format!("--grid-min {lo} exceeds --grid-max {hi}")))
        } else {
            Ok(())
        }
    };
    match kind {
        ModelKind::Independent => Err(CliError::input("grid", "grid flags apply to sscm and sem only")),
        ModelKind::Sscm => {
            let m = median(&mut pairwise_distances(sample.coords()).stage("grid")?.upper_values());
            let (lo, hi) = (min.unwrap_or(0.1 / m), max.unwrap_or(10.0 / m));
            check(lo, hi)?;
            if !(lo > 0.0) {
                return Err(CliError::input("grid", "lambda grid must be positive"));
            }
            Ok(SpatialModel::Sscm {
                lambda_grid: geometric_grid(lo, hi, size.unwrap_or(20)),
            })
        }
        ModelKind::Sem => {
            let (lo, hi) = (min.unwrap_or(-0.95), max.unwrap_or(0.95));
            check(lo, hi)?;
            if !(lo > -1.0 && hi < 1.0) {
                return Err(CliError::input("grid", "theta grid must lie in (-1, 1)"));
            }
            let count = size.unwrap_or(39);
            Ok(SpatialModel::Sem {
                theta_grid: if lo == hi { vec![lo] } else { linear_grid(lo, hi, count) },
                d_max: None,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub model: ModelKind,
    pub d: usize,
    pub spatial_param: Option<f64>,
    pub loglik: f64,
    pub selection: Option<DimSelection>,
}

impl fmt::Display for FitSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model   {}", self.model.label())?;
        writeln!(f, "d       {}", self.d)?;
        match (self.model, self.spatial_param) {
            (ModelKind::Sscm, Some(v)) => writeln!(f, "lambda  {v}")?,
            (ModelKind::Sem, Some(v)) => writeln!(f, "theta   {v}")?,
            _ => {}
        }
        write!(f, "loglik  {}", self.loglik)?;
        if let Some(sel) = &self.selection {
            write!(f, "\nselection by {:?}:", sel.criterion)?;
            for row in &sel.trace {
                let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
                write!(
                    f,
                    "\n  delta {}  value {}  p {}",
                    row.delta,
                    show(row.value),
                    show(row.p_value)
                )?;
            }
        }
        Ok(())
    }
}

pub fn select_rank(
    sample: &SpatialSample,
    spec: &BasisSpec,
    model: &SpatialModel,
    criterion: Criterion,
    alpha: f64,
    folds: usize,
    seed: u64,
) -> CliResult<DimSelection> {
    let (p, r, n) = (sample.p(), spec.r(), sample.n());
    match criterion {
        Criterion::Lr => select_lr(&rank_logliks(sample, spec, model).stage("select")?, p, r, alpha),
        Criterion::Aic | Criterion::Bic => {
            select_ic(&rank_logliks(sample, spec, model).stage("select")?, p, r, n, criterion)
        }
        Criterion::CvMpe => select_cv(
            sample,
            model,
            spec,
            &CvOptions {
                folds,
                seed,
                ..CvOptions::default()
            },
        ),
    }
    .stage("select")
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<FitSummary> {
    let sample = read_dataset(&args.data, Response::Required)?.into_sample()?;
    if args.r == 0 {
        return Err(CliError::input("fit", "--r must be positive"));
    }
    let spec = BasisSpec::polynomial(args.r);
    let model = spatial_model(args.model, &sample, args.grid_min, args.grid_max, args.grid_size)?;
    let selection = match args.select_d {
        Some(c) => Some(select_rank(&sample, &spec, &model, c, args.alpha, args.folds, args.seed)?),
        None => None,
    };
    let d = selection.as_ref().map_or(args.d.unwrap_or(0), |s| s.d_star);
    let fit = fit_model(&sample, &spec, d, &model).stage("fit")?;
    let file = ModelFile::new(&fit, &sample, selection.clone(), args.seed)?;
    file.save(&args.out)?;
    Ok(FitSummary {
        model: fit.model,
        d,
        spatial_param: fit.spatial_param,
        loglik: fit.loglik,
        selection,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictSummary {
    pub mode: PredictorMode,
    pub bandwidths: Bandwidths,
    pub rows: usize,
    pub fallbacks: usize,
}

impl fmt::Display for PredictSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mode {}  h1 {}", self.mode, self.bandwidths.h1)?;
        if let Some(h2) = self.bandwidths.h2 {
            write!(f, "  h2 {h2}")?;
        }
        write!(f, "\n{} predictions, {} nearest-neighbor fallbacks", self.rows, self.fallbacks)
    }
}

pub fn cmd_predict(args: &PredictArgs) -> CliResult<PredictSummary> {
    let mut file = ModelFile::load(&args.model)?;
    let query = read_dataset(&args.data, Response::Optional)?;
    if query.p() != file.p() {
        return Err(CliError::input(
            "predict",
            format!("query has {} predictors, model expects {}", query.p(), file.p()),
        ));
    }
    let kernels = if args.kernels == 1 { Kernels::One } else { Kernels::Two };
    let space = if args.full {
        PredictorSpace::Full
    } else {
        PredictorSpace::Reduced(file.model)
    };
    let mode = PredictorMode::new(kernels, space);
    let reference = file.reference(mode)?;

    let bandwidths = if args.tune_bandwidths {
        let tuned = tune_bandwidths(&reference, kernels).stage("tune")?;
        file.set_bandwidths(StoredBandwidths {
            mode: mode.to_string(),
            h1: tuned.bandwidths.h1,
            h2: tuned.bandwidths.h2,
            loocv_error: tuned.error,
        });
        file.save(&args.model)?;
        tuned.bandwidths
    } else if let Some(h1) = args.h1 {
        Bandwidths { h1, h2: args.h2 }
    } else if let Some(stored) = file.bandwidths_for(mode) {
        Bandwidths {
            h1: stored.h1,
            h2: stored.h2,
        }
    } else {
        return Err(CliError::input(
            "predict",
            format!("no stored bandwidths for {mode}; pass --h1 or --tune-bandwidths"),
        ));
    };
    let config = PredictorConfig::new(mode, bandwidths).stage("predict")?;

    let points = match space {
        PredictorSpace::Full => query.x.clone(),
        PredictorSpace::Reduced(_) => file.fit()?.reduce_rows(&query.x).stage("reduce")?,
    };
    let predictions = (0..points.nrows())
        .into_par_iter()
        .map(|i| {
            let q: Vec<f64> = points.row(i).iter().copied().collect();
            predict_point(&q, query.coords.get(i), config.bandwidths, &reference)
        })
        .collect::<spatial_sdr::Result<Vec<_>>>()
        .stage("predict")?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::input("write", e.to_string());
    w.write_record(["s1", "s2", "y_hat", "fallback_flag"]).map_err(fail)?;
    for (i, pred) in predictions.iter().enumerate() {
        let [s1, s2] = query.coords.get(i);
        w.write_record([
            s1.to_string(),
            s2.to_string(),
            pred.y_hat.to_string(),
            u8::from(pred.fallback).to_string(),
        ])
        .map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::input("write", e.to_string()))?;
    atomic_write(&args.out, &bytes)?;
    Ok(PredictSummary {
        mode,
        bandwidths,
        rows: predictions.len(),
        fallbacks: predictions.iter().filter(|p| p.fallback).count(),
    })
}

fn parse_methods(list: &str) -> CliResult<Vec<PredictorMode>> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(PredictorMode::ALL.to_vec());
    }
    let mut out: Vec<PredictorMode> = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let mode: PredictorMode = item.parse().stage("simulate")?;
        if !out.contains(&mode) {
            out.push(mode);
        }
    }
    if out.is_empty() {
        return Err(CliError::input("simulate", "no methods given"));
    }
    Ok(out)
}

pub fn sim_config(args: &SimulateArgs) -> CliResult<SimConfig> {
    if args.model == ModelKind::Independent {
        return Err(CliError::input("simulate", "--model must be sscm or sem"));
    }
    let cfg = SimConfig {
        n: args.n,
        p: args.p,
        r: args.r,
        d: args.d,
        lambda: args.lambda,
        theta: args.theta,
        reps: args.reps,
        train_frac: args.train_frac,
        locations: match args.locations {
            Locations::Uniform => LocationMode::Uniform,
            Locations::Grid => LocationMode::Grid,
        },
        ..SimConfig::new(args.model, args.seed)
    };
    cfg.validate().stage("simulate")?;
    Ok(cfg)
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<MetricsReport> {
    let cfg = sim_config(args)?;
    let methods = parse_methods(&args.methods)?;
    let policy = match args.d_policy {
        None => DPolicy::Fixed { d: cfg.d },
        Some(DPolicy::Lr { .. }) => DPolicy::Lr { alpha: args.alpha },
        Some(DPolicy::Cv { .. }) => DPolicy::Cv { folds: args.folds },
        Some(p) => p,
    };
    let report = run_experiment(&cfg, &methods, policy).stage("simulate")?;
    atomic_write(&args.out, to_json(&report)?.as_bytes())?;
    if let Some(dir) = &args.datasets {
        write_datasets(&cfg, dir)?;
    }
    if args.strict && report.any_unstable() {
        let names: Vec<&str> = report
            .methods
            .iter()
            .filter(|m| m.unstable)
            .map(|m| m.method.as_str())
            .collect();
        return Err(CliError::numerical(
            "simulate",
            format!("unstable methods: {}", names.join(", ")),
        ));
    }
    Ok(report)
}

fn write_datasets(cfg: &SimConfig, dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::input("write", format!("{}: {e}", dir.display())))?;
    for rep in 0..cfg.reps {
        let data = simulate_replication(cfg, rep).stage("simulate")?;
        atomic_write(&dir.join(format!("rep{rep:04}_train.csv")), &dataset_csv(&data.train_sample(), true)?)?;
        atomic_write(&dir.join(format!("rep{rep:04}_test.csv")), &dataset_csv(&data.test_sample(), true)?)?;
    }
    Ok(())
}

pub fn summary_table(report: &MetricsReport) -> String {
    let mut out = format!("{:<10} {:>12} {:>12} {:>9}", "method", "mean_mse", "std_mse", "failures");
    let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
    for m in &report.methods {
        out.push_str(&format!(
            "\n{:<10} {:>12} {:>12} {:>9}{}",
            m.method,
            show(m.mean),
            show(m.std),
            m.failures,
            if m.unstable { "  unstable" } else { "" }
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub mse: f64,
    pub rmse: f64,
    /// `y - y_hat` per row.
    pub residuals: Vec<f64>,
}

fn same_location(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<Evaluation> {
    let preds = read_named(&args.predictions, &["s1", "s2", "y_hat"])?;
    let truth = read_named(&args.truth, &["s1", "s2", "y"])?;
    if preds.len() != truth.len() {
        return Err(CliError::input(
            "evaluate",
            format!("{} predictions but {} observations", preds.len(), truth.len()),
        ));
    }
    let mut residuals = Vec::with_capacity(preds.len());
    for (i, (p, t)) in preds.iter().zip(&truth).enumerate() {
        if !(same_location(p[0], t[0]) && same_location(p[1], t[1])) {
            return Err(CliError::input(
                "evaluate",
                format!("row {}: locations differ ({}, {}) vs ({}, {})", i + 1, p[0], p[1], t[0], t[1]),
            ));
        }
        residuals.push(t[2] - p[2]);
    }
    let mse = residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64;
    let report = Evaluation {
        n: residuals.len(),
        mse,
        rmse: mse.sqrt(),
        residuals,
    };
    if let Some(out) = &args.out {
        atomic_write(out, to_json(&report)?.as_bytes())?;
    }
    Ok(report)
}
