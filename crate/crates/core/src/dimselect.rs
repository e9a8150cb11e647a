//! Choosing the dimension `d` of the reduction.
//!
//! The likelihood-based rules consume only the profile log-likelihoods
//! `L_0, ..., L_min(r,p)`; cross-validation refits the model and scores a
//! predictor on held-out folds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::basis::BasisSpec;
use crate::error::{Result, SdrError};
use crate::fit::{fit_model, SpatialModel};
use crate::predictor::{predict_point, tune_bandwidths, Kernels, TrainingReference};
use crate::sample::SpatialSample;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Lr,
    Aic,
    Bic,
    CvMpe,
}

impl std::str::FromStr for Criterion {
    type Err = SdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(Self::Lr),
            "aic" => Ok(Self::Aic),
            "bic" => Ok(Self::Bic),
            "cv" | "cv_mpe" | "cv-mpe" => Ok(Self::CvMpe),
            other => Err(SdrError::InvalidConfig(format!("unknown criterion '{other}'"))),
        }
    }
}

/// One row of the selection trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub delta: usize,
    /// Profile log-likelihood (absent for cross-validation).
    pub loglik: Option<f64>,
    /// LR statistic, AIC/BIC value or CV error; `None` if the rank failed.
    pub value: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimSelection {
    pub criterion: Criterion,
    pub d_star: usize,
    pub trace: Vec<TraceRow>,
    pub alpha: Option<f64>,
}

fn check_logliks(logliks: &[f64], p: usize, r: usize) -> Result<()> {
    let m = p.min(r);
    if logliks.len() != m + 1 {
        return Err(SdrError::DimensionMismatch(format!(
            "{} log-likelihoods for min(r, p) = {m}",
            logliks.len()
        )));
    }
    for k in 1..logliks.len() {
        let slack = 1e-10 * logliks[k - 1].abs().max(1.0);
        if !(logliks[k] >= logliks[k - 1] - slack) {
            return Err(SdrError::NonMonotoneLogliks(k - 1, k));
        }
    }
    Ok(())
}

/// Upper-tail probability of the chi-square distribution with `q` degrees
/// of freedom.
pub fn chi_square_sf(x: f64, q: usize) -> f64 {
    if q == 0 || x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(q as f64)
        .expect("positive degrees of freedom")
        .sf(x)
}

/// Sequential likelihood-ratio testing: `d` is the first `delta` whose
/// statistic `2 (L_max - L_delta)` is not rejected against `chi2_q`,
/// `q = (r - delta)(p - delta)`.
pub fn select_lr(logliks: &[f64], p: usize, r: usize, alpha: f64) -> Result<DimSelection> {
    check_logliks(logliks, p, r)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SdrError::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let m = p.min(r);
    let l_max = logliks[m];
    let trace: Vec<TraceRow> = logliks
        .iter()
        .enumerate()
        .map(|(delta, &l)| {
            let stat = (2.0 * (l_max - l)).max(0.0);
            TraceRow {
                delta,
                loglik: Some(l),
                value: Some(stat),
                p_value: Some(chi_square_sf(stat, (r - delta) * (p - delta))),
            }
        })
        .collect();
    let d_star = trace
        .iter()
        .find(|row| row.p_value.unwrap() >= alpha)
        .map_or(m, |row| row.delta);
    Ok(DimSelection {
        criterion: Criterion::Lr,
        d_star,
        trace,
        alpha: Some(alpha),
    })
}

/// Free parameters at rank `delta`: `p(p+3)/2 + r delta + delta (p - delta)`.
pub fn parameter_count(p: usize, r: usize, delta: usize) -> usize {
    p * (p + 3) / 2 + r * delta + delta * (p - delta)
}

/// AIC or BIC minimization; ties go to the smaller rank.
pub fn select_ic(
    logliks: &[f64],
    p: usize,
    r: usize,
    n: usize,
    criterion: Criterion,
) -> Result<DimSelection> {
    check_logliks(logliks, p, r)?;
    let weight = match criterion {
        Criterion::Aic => 2.0,
        Criterion::Bic => (n as f64).ln(),
        other => {
            return Err(SdrError::InvalidConfig(format!(
                "{other:?} is not an information criterion"
            )))
        }
    };
    let trace: Vec<TraceRow> = logliks
        .iter()
        .enumerate()
        .map(|(delta, &l)| TraceRow {
            delta,
            loglik: Some(l),
            value: Some(-2.0 * l + weight * parameter_count(p, r, delta) as f64),
            p_value: None,
        })
        .collect();
    let d_star = argmin_first(&trace).expect("at least one rank");
    Ok(DimSelection {
        criterion,
        d_star,
        trace,
        alpha: None,
    })
}

fn argmin_first(trace: &[TraceRow]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for row in trace {
        if let Some(v) = row.value {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((row.delta, v));
            }
        }
    }
    best.map(|(d, _)| d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    pub kernels: Kernels,
    /// Candidate ranks; defaults to `1..=min(r, p)`.
    pub d_range: Option<Vec<usize>>,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            seed: 0,
            kernels: Kernels::Two,
            d_range: None,
        }
    }
}

/// Assigns each of `n` indices to one of `folds` folds after a seeded
/// shuffle. `folds = n` gives leave-one-out.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (k, i) in idx.into_iter().enumerate() {
        out[k % folds].push(i);
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    out
}

fn fold_error(
    sample: &SpatialSample,
    spec: &BasisSpec,
    model: &SpatialModel,
    d: usize,
    kernels: Kernels,
    test: &[usize],
) -> Result<f64> {
    let train: Vec<usize> = (0..sample.n()).filter(|i| test.binary_search(i).is_err()).collect();
    let train_sample = sample.select(&train);
    let fit = fit_model(&train_sample, spec, d, model)?;
    let reference = TrainingReference::reduced(&fit, &train_sample)?;
    let bw = tune_bandwidths(&reference, kernels)?.bandwidths;
    let test_sample = sample.select(test);
    let reduced = fit.reduce_rows(test_sample.x())?;
    let mut sse = 0.0;
    for (k, &y) in test_sample.y().iter().enumerate() {
        let q: Vec<f64> = reduced.row(k).iter().copied().collect();
        let pred = predict_point(&q, test_sample.coords().get(k), bw, &reference)?;
        sse += (y - pred.y_hat).powi(2);
    }
    Ok(sse / test.len() as f64)
}

/// Cross-validated minimum prediction error: for every candidate rank, the
/// mean held-out squared error of the reduced-predictor kernel rule.
pub fn select_cv(
    sample: &SpatialSample,
    model: &SpatialModel,
    spec: &BasisSpec,
    options: &CvOptions,
) -> Result<DimSelection> {
    let m = sample.p().min(spec.r());
    let d_range = options.d_range.clone().unwrap_or_else(|| (1..=m).collect());
    if d_range.is_empty() {
        return Err(SdrError::InvalidConfig("empty range of candidate ranks".into()));
    }
    if let Some(&bad) = d_range.iter().find(|&&d| d > m) {
        return Err(SdrError::RankOutOfRange { d: bad, max: m });
    }
    if options.folds < 2 || options.folds > sample.n() {
        return Err(SdrError::InvalidConfig(format!(
            "folds must lie in [2, n], got {}",
            options.folds
        )));
    }
    let folds = fold_assignment(sample.n(), options.folds, options.seed);
    let jobs: Vec<(usize, usize)> = d_range
        .iter()
        .flat_map(|&d| (0..folds.len()).map(move |k| (d, k)))
        .collect();
    let errors: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(d, k)| fold_error(sample, spec, model, d, options.kernels, &folds[k]).ok())
        .collect();

    let mut sorted = d_range.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let trace: Vec<TraceRow> = sorted
        .iter()
        .map(|&d| {
            let per_fold: Option<Vec<f64>> = jobs
                .iter()
                .zip(&errors)
                .filter(|((jd, _), _)| *jd == d)
                .map(|(_, e)| *e)
                .collect();
            TraceRow {
                delta: d,
                loglik: None,
                value: per_fold.map(|v| v.iter().sum::<f64>() / v.len() as f64),
                p_value: None,
            }
        })
        .collect();
    let d_star = argmin_first(&trace).ok_or(SdrError::CvFailed)?;
    Ok(DimSelection {
        criterion: Criterion::CvMpe,
        d_star,
        trace,
        alpha: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn degrees_of_freedom_and_penalties() {
        assert_eq!(parameter_count(5, 2, 1), 26);
        let flat = [0.0; 3];
        let aic = select_ic(&flat, 5, 2, 100, Criterion::Aic).unwrap();
        let bic = select_ic(&flat, 5, 2, 100, Criterion::Bic).unwrap();
        let pen0 = parameter_count(5, 2, 0) as f64;
        assert_relative_eq!(aic.trace[1].value.unwrap(), 52.0);
        assert_relative_eq!(bic.trace[1].value.unwrap(), 26.0 * 100f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(bic.trace[1].value.unwrap(), 119.7344, epsilon = 1e-4);
        assert_relative_eq!(aic.trace[0].value.unwrap(), 2.0 * pen0);
        assert_eq!(aic.d_star, 0);
        assert_eq!(bic.d_star, 0);
    }

    #[test]
    fn zero_statistic_accepts_immediately() {
        let s = select_lr(&[-10.0, -10.0, -10.0], 5, 2, 0.999).unwrap();
        assert_eq!(s.d_star, 0);
        assert_eq!(s.trace[0].p_value, Some(1.0));
    }

    #[test]
    fn all_rejected_gives_full_rank() {
        let s = select_lr(&[-1e6, -1e5, 0.0], 5, 2, 0.05).unwrap();
        assert_eq!(s.d_star, 2);
        let s = select_lr(&[-1e6, 0.0, 0.0], 5, 2, 0.05).unwrap();
        assert_eq!(s.d_star, 1);
    }

    #[test]
    fn non_monotone_logliks_rejected() {
        assert_eq!(
            select_lr(&[0.0, -1.0, 0.0], 5, 2, 0.05).unwrap_err(),
            SdrError::NonMonotoneLogliks(0, 1)
        );
        assert!(select_ic(&[0.0, 1.0], 5, 2, 10, Criterion::Aic).is_err());
    }

    #[test]
    fn folds_partition_indices() {
        let folds = fold_assignment(23, 5, 7);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() == 4 || f.len() == 5));
        assert_eq!(folds, fold_assignment(23, 5, 7));
        assert_ne!(folds, fold_assignment(23, 5, 8));
    }

    #[test]
    fn criterion_parsing() {
        assert_eq!("BIC".parse::<Criterion>().unwrap(), Criterion::Bic);
        assert_eq!("cv".parse::<Criterion>().unwrap(), Criterion::CvMpe);
        assert!("gic".parse::<Criterion>().is_err());
    }
}
