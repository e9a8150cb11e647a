//! Versioned JSON document holding a fitted reduction and its training data.

use std::path::Path;

use serde::{Deserialize, Serialize};
use spatial_sdr::dimselect::DimSelection;
use spatial_sdr::fit::GridPoint;
use spatial_sdr::{
    Coordinates, DMatrix, DVector, FittedBasis, ModelKind, PredictorMode, ReductionFit, ReductionMetric,
    RrrEstimate, SpatialSample, TrainingReference,
};

use crate::error::{CliError, CliResult, Stage};
use crate::io::atomic_write;

pub const FORMAT_VERSION: u32 = 1;

/// Dense matrix stored row-major with explicit dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for Matrix {
    fn from(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl Matrix {
    pub fn to_dmatrix(&self) -> CliResult<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(CliError::input(
                "load",
                format!("matrix of {} x {} has {} entries", self.rows, self.cols, self.data.len()),
            ));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Bandwidths chosen for one predictor mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredBandwidths {
    pub mode: String,
    pub h1: f64,
    pub h2: Option<f64>,
    /// Leave-one-out squared error at the chosen bandwidths.
    pub loocv_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    pub coords: Vec<[f64; 2]>,
    pub responses: Vec<f64>,
    /// Raw predictors, used by the full-space predictor.
    pub predictors: Matrix,
    /// Reduced predictors `n x d`.
    pub reductions: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub library_version: String,
    pub model: ModelKind,
    pub basis: FittedBasis,
    pub r: usize,
    pub d: usize,
    /// `lambda_hat` (SSCM) or `theta_hat` (SEM).
    pub spatial_param: Option<f64>,
    /// Neighbor threshold of the SEM weights.
    pub d_max: Option<f64>,
    pub loglik: f64,
    pub grid: Vec<GridPoint>,
    pub selection: Option<DimSelection>,
    pub metric: ReductionMetric,
    pub mu_hat: Vec<f64>,
    pub a_hat: Matrix,
    pub b_hat: Matrix,
    pub delta_hat: Matrix,
    pub delta_ls: Matrix,
    pub eigvals: Vec<f64>,
    pub training: TrainingData,
    pub bandwidths: Vec<StoredBandwidths>,
    pub seed: u64,
}

impl ModelFile {
    pub fn new(
        fit: &ReductionFit,
        train: &SpatialSample,
        selection: Option<DimSelection>,
        seed: u64,
    ) -> CliResult<Self> {
        let reductions = fit.reduce_rows(train.x()).stage("reduce")?;
        Ok(Self {
            format_version: FORMAT_VERSION,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            model: fit.model,
            basis: fit.basis.clone(),
            r: fit.est.b_hat.ncols(),
            d: fit.d(),
            spatial_param: fit.spatial_param,
            d_max: fit.d_max,
            loglik: fit.loglik,
            grid: fit.grid.clone(),
            selection,
            metric: fit.metric,
            mu_hat: fit.mu_hat.iter().copied().collect(),
            a_hat: (&fit.est.a_hat).into(),
            b_hat: (&fit.est.b_hat).into(),
            delta_hat: (&fit.est.delta_hat).into(),
            delta_ls: (&fit.est.delta_ls).into(),
            eigvals: fit.est.eigvals.clone(),
            training: TrainingData {
                coords: train.coords().points().to_vec(),
                responses: train.y().to_vec(),
                predictors: train.x().into(),
                reductions: (&reductions).into(),
            },
            bandwidths: Vec::new(),
            seed,
        })
    }

    pub fn p(&self) -> usize {
        self.mu_hat.len()
    }

    pub fn fit(&self) -> CliResult<ReductionFit> {
        Ok(ReductionFit {
            model: self.model,
            spatial_param: self.spatial_param,
            d_max: self.d_max,
            est: RrrEstimate {
                a_hat: self.a_hat.to_dmatrix()?,
                b_hat: self.b_hat.to_dmatrix()?,
                delta_hat: self.delta_hat.to_dmatrix()?,
                delta_ls: self.delta_ls.to_dmatrix()?,
                eigvals: self.eigvals.clone(),
                d: self.d,
            },
            mu_hat: DVector::from_vec(self.mu_hat.clone()),
            loglik: self.loglik,
            grid: self.grid.clone(),
            basis: self.basis.clone(),
            metric: self.metric,
        })
    }

    fn coords(&self) -> CliResult<Coordinates> {
        Coordinates::new(self.training.coords.clone()).stage("load")
    }

    pub fn training_sample(&self) -> CliResult<SpatialSample> {
        SpatialSample::new(
            self.coords()?,
            self.training.predictors.to_dmatrix()?,
            self.training.responses.clone(),
        )
        .stage("load")
    }

    /// Training reference of the predictor space `mode` works in.
    pub fn reference(&self, mode: PredictorMode) -> CliResult<TrainingReference> {
        let points = match mode.model() {
            None => self.training.predictors.to_dmatrix()?,
            Some(kind) if kind == self.model => self.training.reductions.to_dmatrix()?,
            Some(kind) => {
                return Err(CliError::input(
                    "predict",
                    format!("mode {mode} needs a {} model, file holds {}", kind.label(), self.model.label()),
                ))
            }
        };
        TrainingReference::new(points, self.training.responses.clone(), self.coords()?).stage("load")
    }

    pub fn bandwidths_for(&self, mode: PredictorMode) -> Option<&StoredBandwidths> {
        let label = mode.to_string();
        self.bandwidths.iter().find(|b| b.mode == label)
    }

    pub fn set_bandwidths(&mut self, entry: StoredBandwidths) {
        match self.bandwidths.iter_mut().find(|b| b.mode == entry.mode) {
            Some(slot) => *slot = entry,
            None => self.bandwidths.push(entry),
        }
    }

    pub fn to_json(&self) -> CliResult<String> {
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| CliError::numerical("save", e.to_string()))?;
        text.push('\n');
        // Non-finite numbers serialize as null and would not load back.
        Self::from_json(&text).map_err(|_| CliError::numerical("save", "model contains non-finite values"))?;
        Ok(text)
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let file: Self = serde_json::from_str(text).map_err(|e| CliError::input("load", e.to_string()))?;
        if file.format_version != FORMAT_VERSION {
            return Err(CliError::input(
                "load",
                format!("unsupported model format version {}", file.format_version),
            ));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        atomic_write(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input("load", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
