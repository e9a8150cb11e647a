//! Nadaraya–Watson prediction on reduced (or raw) predictors, optionally
//! multiplied by a second Gaussian kernel on geographic distance.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdrError};
use crate::fit::{ModelKind, ReductionFit};
use crate::geometry::{euclidean, Coordinates};
use crate::linalg::{geometric_grid, median};
use crate::sample::SpatialSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernels {
    /// Predictor-space kernel only.
    One,
    /// Predictor-space kernel times spatial kernel.
    Two,
}

/// Space in which predictor distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorSpace {
    /// All `p` raw predictors.
    Full,
    /// The sufficient reduction estimated under the given model.
    Reduced(ModelKind),
}

/// One of `1k.FULL`, `2k.FULL`, `1k.Ind`, `2k.Ind`, `1k.SSCM`, `2k.SSCM`,
/// `1k.SEM`, `2k.SEM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PredictorMode {
    pub kernels: Kernels,
    pub space: PredictorSpace,
}

impl PredictorMode {
    pub const ALL: [PredictorMode; 8] = [
        Self::new(Kernels::One, PredictorSpace::Full),
        Self::new(Kernels::Two, PredictorSpace::Full),
        Self::new(Kernels::One, PredictorSpace::Reduced(ModelKind::Independent)),
        Self::new(Kernels::Two, PredictorSpace::Reduced(ModelKind::Independent)),
        Self::new(Kernels::One, PredictorSpace::Reduced(ModelKind::Sscm)),
        Self::new(Kernels::Two, PredictorSpace::Reduced(ModelKind::Sscm)),
        Self::new(Kernels::One, PredictorSpace::Reduced(ModelKind::Sem)),
        Self::new(Kernels::Two, PredictorSpace::Reduced(ModelKind::Sem)),
    ];

    pub const fn new(kernels: Kernels, space: PredictorSpace) -> Self {
        Self { kernels, space }
    }

    pub fn model(&self) -> Option<ModelKind> {
        match self.space {
            PredictorSpace::Full => None,
            PredictorSpace::Reduced(kind) => Some(kind),
        }
    }
}

impl fmt::Display for PredictorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kernels {
            Kernels::One => "1k",
            Kernels::Two => "2k",
        };
        let s = match self.space {
            PredictorSpace::Full => "FULL",
            PredictorSpace::Reduced(kind) => kind.label(),
        };
        write!(f, "{k}.{s}")
    }
}

impl FromStr for PredictorMode {
    type Err = SdrError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || SdrError::InvalidConfig(format!("unknown predictor mode '{s}'"));
        let (k, space) = s.split_once('.').ok_or_else(bad)?;
        let kernels = match k.to_ascii_lowercase().as_str() {
            "1k" => Kernels::One,
            "2k" => Kernels::Two,
            _ => return Err(bad()),
        };
        let space = if space.eq_ignore_ascii_case("full") {
            PredictorSpace::Full
        } else {
            PredictorSpace::Reduced(space.parse().map_err(|_| bad())?)
        };
        Ok(Self { kernels, space })
    }
}

/// Bandwidths for a predictor; `h2` is present iff two kernels are used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    pub h1: f64,
    pub h2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub mode: PredictorMode,
    pub bandwidths: Bandwidths,
}

impl PredictorConfig {
    pub fn new(mode: PredictorMode, bandwidths: Bandwidths) -> Result<Self> {
        let ok_h1 = bandwidths.h1 > 0.0;
        let ok_h2 = match (mode.kernels, bandwidths.h2) {
            (Kernels::One, None) => true,
            (Kernels::Two, Some(h2)) => h2 > 0.0,
            _ => false,
        };
        if !(ok_h1 && ok_h2) {
            return Err(SdrError::InvalidConfig(format!(
                "bandwidths {bandwidths:?} do not fit mode {mode}"
            )));
        }
        Ok(Self { mode, bandwidths })
    }
}

/// Training points in the predictor space, their responses and locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReference {
    /// `n x q` with `q = d` (reduced) or `q = p` (full).
    pub points: DMatrix<f64>,
    pub responses: Vec<f64>,
    pub coords: Coordinates,
}

impl TrainingReference {
    pub fn new(points: DMatrix<f64>, responses: Vec<f64>, coords: Coordinates) -> Result<Self> {
        if points.nrows() != responses.len() || coords.len() != responses.len() {
            return Err(SdrError::DimensionMismatch(format!(
                "{} points, {} responses, {} locations",
                points.nrows(),
                responses.len(),
                coords.len()
            )));
        }
        Ok(Self {
            points,
            responses,
            coords,
        })
    }

    pub fn full(sample: &SpatialSample) -> Self {
        Self {
            points: sample.x().clone(),
            responses: sample.y().to_vec(),
            coords: sample.coords().clone(),
        }
    }

    pub fn reduced(fit: &ReductionFit, sample: &SpatialSample) -> Result<Self> {
        Self::new(
            fit.reduce_rows(sample.x())?,
            sample.y().to_vec(),
            sample.coords().clone(),
        )
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    fn sq_dist_to(&self, i: usize, query: &[f64]) -> f64 {
        query
            .iter()
            .enumerate()
            .map(|(k, q)| (q - self.points[(i, k)]).powi(2))
            .sum()
    }
}

/// Normalized kernel weights. `fallback` is set when every kernel value
/// underflowed and all weight went to the nearest reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub values: Vec<f64>,
    pub fallback: bool,
}

fn gaussian(u_sq: f64) -> f64 {
    (-0.5 * u_sq).exp()
}

/// Normalizes kernel values, falling back to the point with the smallest
/// scaled squared distance when they all underflow.
fn normalize(mut k: Vec<f64>, scaled_sq: impl Fn(usize) -> f64) -> Weights {
    let total: f64 = k.iter().sum();
    if total > 0.0 && total.is_finite() {
        k.iter_mut().for_each(|v| *v /= total);
        return Weights {
            values: k,
            fallback: false,
        };
    }
    let nearest = (0..k.len())
        .min_by(|&a, &b| scaled_sq(a).total_cmp(&scaled_sq(b)))
        .unwrap_or(0);
    k.iter_mut().for_each(|v| *v = 0.0);
    k[nearest] = 1.0;
    Weights {
        values: k,
        fallback: true,
    }
}

fn check_query(query: &[f64], reference: &TrainingReference) -> Result<()> {
    if reference.is_empty() {
        return Err(SdrError::EmptyReference);
    }
    if query.len() != reference.dim() {
        return Err(SdrError::DimensionMismatch(format!(
            "query of length {} against reference of dimension {}",
            query.len(),
            reference.dim()
        )));
    }
    Ok(())
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 {
        Ok(())
    } else {
        Err(SdrError::InvalidConfig(format!("bandwidth must be positive, got {h}")))
    }
}

/// `w_i ∝ K((||q - R_i|| / h1))` with a Gaussian kernel.
pub fn nw_weights_1k(query: &[f64], reference: &TrainingReference, h1: f64) -> Result<Weights> {
    check_query(query, reference)?;
    check_bandwidth(h1)?;
    let inv = 1.0 / (h1 * h1);
    let u: Vec<f64> = (0..reference.len())
        .map(|i| reference.sq_dist_to(i, query) * inv)
        .collect();
    let k = u.iter().map(|&v| gaussian(v)).collect();
    Ok(normalize(k, |i| u[i]))
}

/// `w_i ∝ K(||q - R_i|| / h1) K(||s0 - s_i|| / h2)`.
pub fn nw_weights_2k(
    query: &[f64],
    s0: [f64; 2],
    reference: &TrainingReference,
    h1: f64,
    h2: f64,
) -> Result<Weights> {
    check_query(query, reference)?;
    check_bandwidth(h1)?;
    check_bandwidth(h2)?;
    let (inv1, inv2) = (1.0 / (h1 * h1), 1.0 / (h2 * h2));
    let u: Vec<f64> = (0..reference.len())
        .map(|i| {
            reference.sq_dist_to(i, query) * inv1
                + euclidean(s0, reference.coords.get(i)).powi(2) * inv2
        })
        .collect();
    let k = (0..reference.len())
        .map(|i| {
            let u1 = reference.sq_dist_to(i, query) * inv1;
            let u2 = euclidean(s0, reference.coords.get(i)).powi(2) * inv2;
            gaussian(u1) * gaussian(u2)
        })
        .collect();
    Ok(normalize(k, |i| u[i]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub y_hat: f64,
    pub fallback: bool,
}

/// Weighted average of the reference responses for one query.
///
/// `query` is already expressed in the reference space (a reduction, or
/// the raw predictors for FULL modes).
pub fn predict_point(
    query: &[f64],
    s0: [f64; 2],
    bandwidths: Bandwidths,
    reference: &TrainingReference,
) -> Result<Prediction> {
    let w = match bandwidths.h2 {
        None => nw_weights_1k(query, reference, bandwidths.h1)?,
        Some(h2) => nw_weights_2k(query, s0, reference, bandwidths.h1, h2)?,
    };
    let y_hat = w
        .values
        .iter()
        .zip(&reference.responses)
        .map(|(w, y)| w * y)
        .sum();
    Ok(Prediction {
        y_hat,
        fallback: w.fallback,
    })
}

/// Predicts at location `s0` from raw predictors `query_x`, reducing them
/// with `fit` unless the mode is FULL.
pub fn predict(
    query_x: &DVector<f64>,
    s0: [f64; 2],
    fit: Option<&ReductionFit>,
    config: &PredictorConfig,
    reference: &TrainingReference,
) -> Result<Prediction> {
    let query = match (config.mode.space, fit) {
        (PredictorSpace::Full, _) => query_x.clone(),
        (PredictorSpace::Reduced(_), Some(fit)) => fit.reduce(query_x)?,
        (PredictorSpace::Reduced(_), None) => {
            return Err(SdrError::InvalidConfig(format!(
                "mode {} needs a fitted reduction",
                config.mode
            )))
        }
    };
    predict_point(query.as_slice(), s0, config.bandwidths, reference)
}

/// 15 geometric points from `0.1 q` to `2 q`, `q` the median pairwise
/// distance between the rows of `points`.
pub fn default_bandwidth_grid(points: &DMatrix<f64>) -> Vec<f64> {
    let n = points.nrows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push((points.row(i) - points.row(j)).norm());
        }
    }
    let q = median(&mut d);
    if q > 0.0 && q.is_finite() {
        geometric_grid(0.1 * q, 2.0 * q, 15)
    } else {
        // Degenerate geometry (e.g. rank-0 reductions): any bandwidth works.
        vec![1.0]
    }
}

pub fn coordinate_matrix(coords: &Coordinates) -> DMatrix<f64> {
    DMatrix::from_fn(coords.len(), 2, |i, j| coords.get(i)[j])
}

/// Result of leave-one-out bandwidth selection.
#[derive(Debug, Clone, PartialEq)]
pub struct LoocvResult {
    pub bandwidths: Bandwidths,
    pub error: f64,
    /// Mean squared LOO error for every evaluated `(h1, h2)`.
    pub curve: Vec<(f64, Option<f64>, f64)>,
}

fn sq_distances(points: &DMatrix<f64>) -> DMatrix<f64> {
    let n = points.nrows();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let d: f64 = points
                .row(i)
                .iter()
                .zip(points.row(j).iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    out
}

fn sorted_grid(grid: &[f64], name: &str) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(SdrError::DegenerateGrid(format!("{name} grid is empty")));
    }
    if let Some(bad) = grid.iter().find(|&&h| !(h > 0.0 && h.is_finite())) {
        return Err(SdrError::DegenerateGrid(format!("{name} grid contains {bad}")));
    }
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    Ok(g)
}

/// Leave-one-out squared error of the predictor at every grid point
/// (every `(h1, h2)` pair for two kernels); returns the minimizer, ties
/// going to the smaller `h1`, then the smaller `h2`.
pub fn loocv_bandwidths(
    reference: &TrainingReference,
    kernels: Kernels,
    h1_grid: &[f64],
    h2_grid: &[f64],
) -> Result<LoocvResult> {
    let n = reference.len();
    if n < 3 {
        return Err(SdrError::DegenerateGrid(format!(
            "leave-one-out needs at least 3 points, got {n}"
        )));
    }
    let g1 = sorted_grid(h1_grid, "h1")?;
    let g2 = match kernels {
        Kernels::One => vec![f64::INFINITY],
        Kernels::Two => sorted_grid(h2_grid, "h2")?,
    };
    let d1 = sq_distances(&reference.points);
    let d2 = match kernels {
        Kernels::One => DMatrix::zeros(n, n),
        Kernels::Two => sq_distances(&coordinate_matrix(&reference.coords)),
    };
    let kernel_matrix = |d: &DMatrix<f64>, h: f64| {
        let inv = 1.0 / (h * h);
        d.map(|v| gaussian(v * inv))
    };
    let k2s: Vec<DMatrix<f64>> = g2
        .iter()
        .map(|&h| {
            if h.is_infinite() {
                DMatrix::from_element(n, n, 1.0)
            } else {
                kernel_matrix(&d2, h)
            }
        })
        .collect();
    let y = &reference.responses;

    let mut curve = Vec::with_capacity(g1.len() * g2.len());
    let mut best: Option<(f64, f64, f64)> = None;
    for &h1 in &g1 {
        let k1 = kernel_matrix(&d1, h1);
        for (&h2, k2) in g2.iter().zip(&k2s) {
            let mut sse = 0.0;
            for i in 0..n {
                let (mut num, mut den) = (0.0, 0.0);
                for j in 0..n {
                    if j != i {
                        let k = k1[(j, i)] * k2[(j, i)];
                        num += k * y[j];
                        den += k;
                    }
                }
                let y_hat = if den > 0.0 {
                    num / den
                } else {
                    let inv2 = if h2.is_infinite() { 0.0 } else { 1.0 / (h2 * h2) };
                    let nearest = (0..n)
                        .filter(|&j| j != i)
                        .min_by(|&a, &b| {
                            let ua = d1[(a, i)] / (h1 * h1) + d2[(a, i)] * inv2;
                            let ub = d1[(b, i)] / (h1 * h1) + d2[(b, i)] * inv2;
                            ua.total_cmp(&ub)
                        })
                        .expect("n >= 3");
                    y[nearest]
                };
                sse += (y[i] - y_hat).powi(2);
            }
            let err = sse / n as f64;
            let h2_opt = (kernels == Kernels::Two).then_some(h2);
            curve.push((h1, h2_opt, err));
            if best.is_none_or(|(e, _, _)| err < e) {
                best = Some((err, h1, h2));
            }
        }
    }
    let (error, h1, h2) = best.expect("grids are nonempty");
    Ok(LoocvResult {
        bandwidths: Bandwidths {
            h1,
            h2: (kernels == Kernels::Two).then_some(h2),
        },
        error,
        curve,
    })
}

/// LOOCV over the default grids of the reference's predictor and
/// coordinate spaces.
pub fn tune_bandwidths(reference: &TrainingReference, kernels: Kernels) -> Result<LoocvResult> {
    let g1 = default_bandwidth_grid(&reference.points);
    let g2 = match kernels {
        Kernels::One => Vec::new(),
        Kernels::Two => default_bandwidth_grid(&coordinate_matrix(&reference.coords)),
    };
    loocv_bandwidths(reference, kernels, &g1, &g2)
}
