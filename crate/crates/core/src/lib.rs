//! Spatial sufficient dimension reduction by principal fitted components.
//!
//! The inverse regression `X | Y = 1 mu' + F (AB)' + E` is fitted under
//! independent errors, a separable exponential covariance (SSCM) or a
//! spatial autoregressive error model (SEM). The fitted reduction feeds a
//! Nadaraya–Watson predictor with an optional spatial kernel.

pub mod basis;
pub mod dimselect;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod linalg;
pub mod predictor;
pub mod rrr;
pub mod sample;
pub mod sem;
pub mod simulate;
pub mod sscm;
#[cfg(any(test, feature = "testing"))]
pub mod testing;

pub use basis::{build_f, eval_f, BasisSpec, FMatrix, FittedBasis};
pub use dimselect::{Criterion, DimSelection};
pub use error::{Result, SdrError};
pub use fit::{fit_model, ModelKind, ReductionFit, SpatialModel};
pub use geometry::{Coordinates, DistanceMatrix};
pub use predictor::{Bandwidths, Kernels, PredictorConfig, PredictorMode, TrainingReference};
pub use rrr::{ReductionMetric, RrrEstimate};
pub use sample::SpatialSample;
pub use simulate::{DPolicy, MetricsReport, SimConfig};

pub use nalgebra::{DMatrix, DVector};
