use nalgebra::DMatrix;

use crate::error::{Result, SdrError};
use crate::geometry::Coordinates;

/// `n` located observations of `p` predictors and a scalar response.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSample {
    coords: Coordinates,
    x: DMatrix<f64>,
    y: Vec<f64>,
}

impl SpatialSample {
    pub fn new(coords: Coordinates, x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        let n = coords.len();
        if x.nrows() != n || y.len() != n {
            return Err(SdrError::DimensionMismatch(format!(
                "{n} locations, {} predictor rows, {} responses",
                x.nrows(),
                y.len()
            )));
        }
        if x.ncols() == 0 {
            return Err(SdrError::DimensionMismatch("no predictors".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(SdrError::InvalidConfig("non-finite sample value".into()));
        }
        Ok(Self { coords, x, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn coords(&self) -> &Coordinates {
        &self.coords
    }

    /// `n x p` predictor matrix.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Observations at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            coords: self.coords.select(idx),
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}
