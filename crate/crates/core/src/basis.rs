//! Inverse-regression feature matrix `F` built from the response.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdrError};
use crate::linalg::numerical_rank;

/// How the response is expanded into `r` features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSpec {
    /// Columns `y, y^2, ..., y^degree`.
    Polynomial { degree: usize },
    /// Indicators of the first `slices - 1` slices. `edges` holds
    /// `slices + 1` ascending cut points spanning the training range; when
    /// absent, equal-frequency cuts are computed from the training response.
    Slice {
        slices: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        edges: Option<Vec<f64>>,
    },
}

impl BasisSpec {
    pub fn polynomial(degree: usize) -> Self {
        Self::Polynomial { degree }
    }

    pub fn slices(slices: usize) -> Self {
        Self::Slice {
            slices,
            edges: None,
        }
    }

    /// Number of basis columns.
    pub fn r(&self) -> usize {
        match self {
            Self::Polynomial { degree } => *degree,
            Self::Slice { slices, .. } => slices.saturating_sub(1),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.r() == 0 {
            return Err(SdrError::InvalidConfig(
                "basis needs at least one column".into(),
            ));
        }
        if let Self::Slice {
            slices,
            edges: Some(edges),
        } = self
        {
            if edges.len() != slices + 1 {
                return Err(SdrError::InvalidConfig(format!(
                    "{slices} slices need {} edges, got {}",
                    slices + 1,
                    edges.len()
                )));
            }
            if edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(SdrError::InvalidConfig(
                    "slice edges must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    /// Raw (uncentered, unscaled) features of a single response value.
    /// For slices, also reports whether `y` fell outside the recorded range.
    fn raw(&self, y: f64) -> (Vec<f64>, bool) {
        match self {
            Self::Polynomial { degree } => ((1..=*degree as i32).map(|k| y.powi(k)).collect(), false),
            Self::Slice { slices, edges } => {
                let edges = edges.as_deref().unwrap_or(&[]);
                let outside = edges.is_empty() || y < edges[0] || y > edges[edges.len() - 1];
                // Slice j covers (edges[j], edges[j+1]], the first one is closed.
                let interior = &edges[1.min(edges.len())..edges.len().saturating_sub(1)];
                let slice = interior.partition_point(|&c| c < y);
                let mut v = vec![0.0; slices - 1];
                if slice < slices - 1 {
                    v[slice] = 1.0;
                }
                (v, outside)
            }
        }
    }
}

/// Centered feature matrix with the statistics needed to evaluate new
/// responses on the same basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FMatrix {
    /// `n x r`, columns centered.
    pub f: DMatrix<f64>,
    pub column_means: Vec<f64>,
    /// Column standard deviations of the centered polynomial columns; ones
    /// for slice indicators.
    pub column_scales: Vec<f64>,
    /// The basis with slice edges resolved.
    pub spec: BasisSpec,
}

/// What is needed to evaluate the basis on new responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedBasis {
    pub spec: BasisSpec,
    pub column_means: Vec<f64>,
    pub column_scales: Vec<f64>,
}

impl FittedBasis {
    /// Centered and scaled features of `y`, on the scale used in fitting.
    pub fn eval_scaled(&self, y: f64) -> Result<Vec<f64>> {
        let mut v = eval_f(y, &self.spec, &self.column_means)?;
        for (x, s) in v.iter_mut().zip(&self.column_scales) {
            *x /= s;
        }
        Ok(v)
    }
}

impl FMatrix {
    pub fn fitted(&self) -> FittedBasis {
        FittedBasis {
            spec: self.spec.clone(),
            column_means: self.column_means.clone(),
            column_scales: self.column_scales.clone(),
        }
    }

    /// Centered columns divided by their scales; this conditions `F'F`
    /// without changing the span of the fitted coefficients.
    pub fn scaled(&self) -> DMatrix<f64> {
        let mut out = self.f.clone();
        for (j, s) in self.column_scales.iter().enumerate() {
            out.column_mut(j).unscale_mut(*s);
        }
        out
    }

    pub fn r(&self) -> usize {
        self.f.ncols()
    }
}

fn equal_frequency_edges(y: &[f64], slices: usize) -> Result<Vec<f64>> {
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges = Vec::with_capacity(slices + 1);
    edges.push(sorted[0]);
    for k in 1..slices {
        let idx = (k * n + slices / 2) / slices;
        edges.push(0.5 * (sorted[idx - 1] + sorted[idx]));
    }
    edges.push(sorted[n - 1]);
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SdrError::RankDeficientF {
            rank: 0,
            expected: slices - 1,
        });
    }
    Ok(edges)
}

pub fn build_f(y: &[f64], spec: &BasisSpec) -> Result<FMatrix> {
    spec.validate()?;
    let n = y.len();
    let r = spec.r();
    if n <= r {
        return Err(SdrError::InsufficientSamples(format!(
            "{n} responses for {r} basis columns"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SdrError::InvalidConfig("non-finite response".into()));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(SdrError::ConstantResponse);
    }
    let spec = match spec {
        BasisSpec::Slice {
            slices,
            edges: None,
        } => BasisSpec::Slice {
            slices: *slices,
            edges: Some(equal_frequency_edges(y, *slices)?),
        },
        other => other.clone(),
    };

    let mut f = DMatrix::zeros(n, r);
    for (i, &yi) in y.iter().enumerate() {
        let (row, _) = spec.raw(yi);
        for (j, v) in row.into_iter().enumerate() {
            f[(i, j)] = v;
        }
    }
    let column_means: Vec<f64> = (0..r).map(|j| f.column(j).mean()).collect();
    for (j, m) in column_means.iter().enumerate() {
        f.column_mut(j).add_scalar_mut(-m);
    }
    let column_scales = match spec {
        BasisSpec::Polynomial { .. } => (0..r)
            .map(|j| {
                let s = (f.column(j).norm_squared() / n as f64).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect(),
        BasisSpec::Slice { .. } => vec![1.0; r],
    };

    let rank = numerical_rank(&f, 1e-10);
    if rank < r {
        return Err(SdrError::RankDeficientF { rank, expected: r });
    }
    Ok(FMatrix {
        f,
        column_means,
        column_scales,
        spec,
    })
}

/// Basis at `y_new` minus the stored training means. For slice bases a
/// value outside the training range is an error; see [`eval_f_nearest`].
pub fn eval_f(y_new: f64, spec: &BasisSpec, column_means: &[f64]) -> Result<Vec<f64>> {
    let (v, outside) = eval_f_nearest(y_new, spec, column_means)?;
    if outside {
        return Err(SdrError::OutOfSliceRange(y_new));
    }
    Ok(v)
}

/// Like [`eval_f`] but assigns out-of-range slice values to the nearest end
/// slice, returning `true` alongside when that happened.
pub fn eval_f_nearest(
    y_new: f64,
    spec: &BasisSpec,
    column_means: &[f64],
) -> Result<(Vec<f64>, bool)> {
    if column_means.len() != spec.r() {
        return Err(SdrError::DimensionMismatch(format!(
            "{} column means for {} basis columns",
            column_means.len(),
            spec.r()
        )));
    }
    if let BasisSpec::Slice { edges: None, .. } = spec {
        return Err(SdrError::InvalidConfig(
            "slice basis has no recorded edges".into(),
        ));
    }
    let (mut v, outside) = spec.raw(y_new);
    for (x, m) in v.iter_mut().zip(column_means) {
        *x -= m;
    }
    Ok((v, outside))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_degree_one_centers() {
        let f = build_f(&[1.0, 2.0, 3.0], &BasisSpec::polynomial(1)).unwrap();
        assert_eq!(f.f.column(0).as_slice(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn polynomial_degree_two_second_column() {
        let f = build_f(&[1.0, 2.0, 3.0, 4.0], &BasisSpec::polynomial(2)).unwrap();
        assert_eq!(f.f.column(1).as_slice(), &[-6.5, -3.5, 1.5, 8.5]);
        assert_eq!(f.column_means, vec![2.5, 7.5]);
        for j in 0..2 {
            assert_relative_eq!(f.scaled().column(j).norm_squared() / 4.0, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(
            build_f(&[2.0, 2.0, 2.0], &BasisSpec::polynomial(1)),
            Err(SdrError::ConstantResponse)
        );
        assert!(matches!(
            build_f(&[1.0, 2.0], &BasisSpec::polynomial(2)),
            Err(SdrError::InsufficientSamples(_))
        ));
        // Two distinct values cannot support a quadratic column.
        assert!(matches!(
            build_f(&[1.0, 2.0, 1.0, 2.0], &BasisSpec::polynomial(2)),
            Err(SdrError::RankDeficientF { rank: 1, expected: 2 })
        ));
    }

    #[test]
    fn eval_polynomial() {
        let spec = BasisSpec::polynomial(2);
        let v = eval_f(2.0, &spec, &[2.5, 7.5]).unwrap();
        assert_eq!(v, vec![-0.5, -3.5]);

        let y = [0.3, 1.1, 2.9, 4.2];
        let f = build_f(&y, &BasisSpec::polynomial(1)).unwrap();
        let mean = y.iter().sum::<f64>() / 4.0;
        let v = eval_f(mean, &f.spec, &f.column_means).unwrap();
        assert!(v[0].abs() < 1e-15);
    }

    #[test]
    fn slices_equal_frequency_and_eval() {
        let y: Vec<f64> = (0..10).map(|i| (i * 7 % 10) as f64 + 0.5).collect();
        let f = build_f(&y, &BasisSpec::slices(3)).unwrap();
        assert_eq!(f.r(), 2);
        let BasisSpec::Slice { edges: Some(edges), .. } = &f.spec else {
            panic!("edges not resolved");
        };
        assert_eq!(edges.len(), 4);
        // Counts per slice from the raw indicators; all zeros is the last slice.
        let mut counts = [0usize; 3];
        for &v in &y {
            let raw = f.spec.raw(v).0;
            counts[raw.iter().position(|&x| x == 1.0).unwrap_or(2)] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 10);
        assert!(counts.iter().all(|&c| c == 3 || c == 4));

        let inside = 0.5 * (edges[1] + edges[2]);
        let v = eval_f(inside, &f.spec, &f.column_means).unwrap();
        assert_eq!(v, vec![-f.column_means[0], 1.0 - f.column_means[1]]);

        assert_eq!(
            eval_f(100.0, &f.spec, &f.column_means),
            Err(SdrError::OutOfSliceRange(100.0))
        );
        let (v, flagged) = eval_f_nearest(100.0, &f.spec, &f.column_means).unwrap();
        assert!(flagged);
        assert_eq!(v, vec![-f.column_means[0], -f.column_means[1]]);
    }

    #[test]
    fn invalid_slice_edges() {
        let spec = BasisSpec::Slice {
            slices: 2,
            edges: Some(vec![0.0, 1.0, 1.0]),
        };
        assert!(matches!(build_f(&[0.1, 0.5, 0.9], &spec), Err(SdrError::InvalidConfig(_))));
    }
}
