mod common;

use approx::assert_relative_eq;
use spatial_sdr::fit::ModelKind;
use spatial_sdr::predictor::{predict, PredictorConfig};
use spatial_sdr::rrr::ReductionMetric;
use spatial_sdr::{fit_model, BasisSpec, Bandwidths, DVector, SpatialModel, TrainingReference};

#[test]
fn reduced_rows_match_row_by_row_products() {
    let s = common::simulated(ModelKind::Sscm, 31, 70, 5, 2, 2);
    let fit = fit_model(&s, &BasisSpec::polynomial(2), 2, &SpatialModel::Sscm { lambda_grid: vec![0.5, 2.0] }).unwrap();
    let rows = fit.reduce_rows(s.x()).unwrap();
    let dinv = fit.est.delta_hat.clone().try_inverse().unwrap();
    for i in 0..s.n() {
        let x: DVector<f64> = s.x().row(i).transpose();
        let brute = fit.est.a_hat.transpose() * &dinv * (x - &fit.mu_hat);
        for k in 0..2 {
            assert_relative_eq!(rows[(i, k)], brute[k], epsilon = 1e-9, max_relative = 1e-9);
        }
    }
}

#[test]
fn centering_does_not_change_reduced_distances() {
    let s = common::simulated(ModelKind::Sem, 32, 60, 4, 2, 2);
    let fit = fit_model(&s, &BasisSpec::polynomial(2), 2, &SpatialModel::Sem { theta_grid: vec![0.3], d_max: None }).unwrap();
    let m = fit.projection().unwrap();
    let centered = fit.reduce_rows(s.x()).unwrap();
    let uncentered = s.x() * &m;
    for (i, j) in [(0, 1), (5, 40), (17, 59)] {
        let a = (centered.row(i) - centered.row(j)).norm();
        let b = (uncentered.row(i) - uncentered.row(j)).norm();
        assert_relative_eq!(a, b, epsilon = 1e-10, max_relative = 1e-10);
    }
    assert_relative_eq!(fit.reduce(&fit.mu_hat).unwrap().norm(), 0.0, epsilon = 1e-12);
}

#[test]
fn least_squares_metric_spans_the_same_directions_at_full_rank() {
    let s = common::simulated(ModelKind::Sem, 33, 80, 4, 2, 2);
    let mut fit = fit_model(&s, &BasisSpec::polynomial(2), 2, &SpatialModel::Independent).unwrap();
    let a = fit.projection().unwrap();
    fit.metric = ReductionMetric::DeltaLs;
    let b = fit.projection().unwrap();
    // Both are p x 2 maps of rank 2; at full rank D_hat = D_ls.
    assert_relative_eq!(a, b, epsilon = 1e-8, max_relative = 1e-8);
}

#[test]
fn prediction_at_a_training_point_with_tiny_bandwidths() {
    let s = common::simulated(ModelKind::Sem, 34, 60, 4, 2, 2);
    let fit = fit_model(&s, &BasisSpec::polynomial(2), 2, &SpatialModel::Independent).unwrap();
    let reference = TrainingReference::reduced(&fit, &s).unwrap();
    let config = PredictorConfig::new("2k.Ind".parse().unwrap(), Bandwidths { h1: 1e-4, h2: Some(1e-4) }).unwrap();
    let x: DVector<f64> = s.x().row(7).transpose();
    let p = predict(&x, s.coords().get(7), Some(&fit), &config, &reference).unwrap();
    assert_relative_eq!(p.y_hat, s.y()[7], epsilon = 1e-9);
    let full = PredictorConfig::new("1k.FULL".parse().unwrap(), Bandwidths { h1: 1e-4, h2: None }).unwrap();
    let p = predict(&x, s.coords().get(7), None, &full, &TrainingReference::full(&s)).unwrap();
    assert_relative_eq!(p.y_hat, s.y()[7], epsilon = 1e-9);
    let missing = predict(&x, s.coords().get(7), None, &config, &reference);
    assert!(missing.is_err());
}
