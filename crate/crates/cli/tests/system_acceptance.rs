//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stderr (outside the harness capture) and then asserts.

use std::io::Write;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spatial_sdr::dimselect::{select_cv, select_ic, select_lr, CvOptions, DEFAULT_ALPHA};
use spatial_sdr::fit::{rank_loglik_table, rank_logliks, ModelKind};
use spatial_sdr::geometry::{build_h, build_w, build_w_theta, pairwise_distances};
use spatial_sdr::predictor::{nw_weights_1k, nw_weights_2k, predict_point, PredictorSpace};
use spatial_sdr::sem::{default_theta_grid, sem_transform};
use spatial_sdr::simulate::{run_experiment, simulate_replication, SimConfig};
use spatial_sdr::sscm::sscm_transform;
use spatial_sdr::testing::{direct_loglik, nelder_mead, pack_rank_one, unpack_rank_one};
use spatial_sdr::{
    build_f, fit_model, BasisSpec, Bandwidths, Criterion, DMatrix, DPolicy, Kernels, MetricsReport, PredictorMode,
    ReductionFit, SpatialModel, SpatialSample, TrainingReference,
};

fn report(criterion: usize, pass: bool, detail: String) {
    let line = format!(
        "acceptance criterion {criterion:>2}: {}  {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn sample(model: ModelKind, seed: u64, n: usize, p: usize, r: usize, d: usize) -> SpatialSample {
    let cfg = SimConfig {
        n,
        p,
        r,
        d,
        reps: 1,
        ..SimConfig::new(model, seed)
    };
    simulate_replication(&cfg, 0).unwrap().sample
}

fn projector(a: &DMatrix<f64>) -> DMatrix<f64> {
    let q = a.clone().qr().q();
    &q * q.transpose()
}

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

#[test]
fn criterion_01_collapse_identities() {
    let start = Instant::now();
    let spec = BasisSpec::polynomial(2);
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let data_model = if seed % 2 == 0 { ModelKind::Sem } else { ModelKind::Sscm };
        let s = sample(data_model, 100 + seed, 100, 6, 2, 2);
        for d in 1..=2 {
            let ind = fit_model(&s, &spec, d, &SpatialModel::Independent).unwrap();
            let sem = fit_model(&s, &spec, d, &SpatialModel::Sem { theta_grid: vec![0.0], d_max: None }).unwrap();
            let sscm = fit_model(&s, &spec, d, &SpatialModel::Sscm { lambda_grid: vec![f64::INFINITY] }).unwrap();
            for other in [&sem, &sscm] {
                let diffs = [
                    max_abs(&projector(&ind.est.a_hat), &projector(&other.est.a_hat)),
                    max_abs(&projector(&ind.est.b_hat.transpose()), &projector(&other.est.b_hat.transpose())),
                    max_abs(&ind.est.coefficient(), &other.est.coefficient()),
                    max_abs(&ind.est.delta_hat, &other.est.delta_hat),
                    (&ind.mu_hat - &other.mu_hat).amax(),
                    (ind.loglik - other.loglik).abs(),
                ];
                worst = diffs.iter().fold(worst, |m, &v| m.max(v));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-8 && secs < 5.0;
    report(1, pass, format!("max deviation {worst:.2e}, {secs:.2} s"));
    assert!(pass);
}

/// `S^{-1}` and `log|S|` of the fitted spatial structure.
fn structure_at(fit: &ReductionFit, s: &SpatialSample) -> (DMatrix<f64>, f64) {
    let n = s.n();
    let dist = pairwise_distances(s.coords()).unwrap();
    match fit.model {
        ModelKind::Independent => (DMatrix::identity(n, n), 0.0),
        ModelKind::Sscm => {
            let h = build_h(&dist, fit.spatial_param.unwrap()).unwrap();
            (h.inverse(), h.log_det())
        }
        ModelKind::Sem => {
            let w = build_w(&dist, fit.d_max.unwrap()).unwrap();
            let wt = build_w_theta(&w, fit.spatial_param.unwrap()).unwrap();
            (wt.matrix().transpose() * wt.matrix(), -2.0 * wt.log_abs_det())
        }
    }
}

#[test]
fn criterion_02_closed_form_beats_numeric_optimizer() {
    let start = Instant::now();
    let spec = BasisSpec::polynomial(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_consistency: f64 = 0.0;
    for kind in [ModelKind::Independent, ModelKind::Sscm, ModelKind::Sem] {
        for k in 0..5 {
            let data_model = if kind == ModelKind::Sscm { ModelKind::Sscm } else { ModelKind::Sem };
            let s = sample(data_model, 200 + k, 20, 2, 1, 1);
            let model = SpatialModel::with_default_grid(kind, &s).unwrap();
            let fit = fit_model(&s, &spec, 1, &model).unwrap();
            let f = build_f(s.y(), &spec).unwrap().scaled();
            let (s_inv, log_det_s) = structure_at(&fit, &s);
            let objective = |theta: &[f64]| {
                let (mu, c, delta) = unpack_rank_one(theta, 2, 1);
                -direct_loglik(s.x(), &f, &s_inv, log_det_s, &mu, &c, &delta)
            };
            let closed = pack_rank_one(&fit.mu_hat, &fit.est.a_hat, &fit.est.b_hat, &fit.est.delta_hat);
            let at_closed = -objective(&closed);
            worst_consistency = worst_consistency.max((at_closed - fit.loglik).abs() / fit.loglik.abs());

            let mut best = f64::INFINITY;
            for start_k in 0..4 {
                let mut x0 = closed.clone();
                if start_k > 0 {
                    for v in &mut x0 {
                        *v += 0.5 * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                let mut value = f64::INFINITY;
                for _ in 0..4 {
                    let (x, v) = nelder_mead(objective, &x0, 0.2, 20_000, 1e-15);
                    x0 = x;
                    if v >= value - 1e-12 {
                        value = value.min(v);
                        break;
                    }
                    value = v;
                }
                best = best.min(value);
            }
            worst_gap = worst_gap.max(-best - fit.loglik);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_gap <= 1e-4 && worst_consistency <= 1e-9 && secs < 60.0;
    report(
        2,
        pass,
        format!(
            "max (optimizer - closed form) {worst_gap:.2e}, closed-form loglik consistency {worst_consistency:.1e}, {secs:.1} s"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_full_rank_reproduces_least_squares() {
    let start = Instant::now();
    let shapes = [(6, 2), (5, 3), (2, 3), (4, 1)];
    let kinds = [ModelKind::Independent, ModelKind::Sscm, ModelKind::Sem];
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let (p, r) = shapes[i % shapes.len()];
        let kind = kinds[i % kinds.len()];
        let data_model = if kind == ModelKind::Sscm { ModelKind::Sscm } else { ModelKind::Sem };
        let s = sample(data_model, 300 + i as u64, 80, p, r, 1);
        let spec = BasisSpec::polynomial(r);
        let model = SpatialModel::with_default_grid(kind, &s).unwrap();
        let fit = fit_model(&s, &spec, p.min(r), &model).unwrap();
        let f = build_f(s.y(), &spec).unwrap().scaled();
        let dist = pairwise_distances(s.coords()).unwrap();
        let (x_bar, f_bar) = match kind {
            ModelKind::Independent => {
                let mut xc = s.x().clone();
                for mut col in xc.column_iter_mut() {
                    let m = col.mean();
                    col.add_scalar_mut(-m);
                }
                (xc, f.clone())
            }
            ModelKind::Sscm => {
                let h = build_h(&dist, fit.spatial_param.unwrap()).unwrap();
                let data = sscm_transform(s.x(), &f, &h).unwrap();
                (data.x_bar().clone(), data.f_bar().clone())
            }
            ModelKind::Sem => {
                let w = build_w(&dist, fit.d_max.unwrap()).unwrap();
                let wt = build_w_theta(&w, fit.spatial_param.unwrap()).unwrap();
                let data = sem_transform(s.x(), &f, &wt).unwrap();
                (data.x_bar().clone(), data.f_bar().clone())
            }
        };
        let c_ls = f_bar.svd(true, true).solve(&x_bar, 1e-14).unwrap().transpose();
        let scale = c_ls.amax().max(1.0);
        worst = worst.max(max_abs(&fit.est.coefficient(), &c_ls) / scale);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-8 && secs < 5.0;
    report(3, pass, format!("max |AB - C_LS| {worst:.2e}, {secs:.2} s"));
    assert!(pass);
}

fn mean(report: &MetricsReport, method: &str) -> f64 {
    report.method(method).and_then(|m| m.mean).unwrap_or(f64::NAN)
}

/// Share of replications in which `better` has strictly lower MSE than `worse`.
fn pairwise_share(report: &MetricsReport, better: &str, worse: &str) -> f64 {
    let (a, b) = (&report.method(better).unwrap().mse, &report.method(worse).unwrap().mse);
    let pairs: Vec<(f64, f64)> = a.iter().zip(b).filter_map(|(x, y)| Some(((*x)?, (*y)?))).collect();
    pairs.iter().filter(|(x, y)| x < y).count() as f64 / a.len() as f64
}

fn table_config(model: ModelKind) -> SimConfig {
    SimConfig {
        reps: 30,
        ..SimConfig::new(model, 2024)
    }
}

#[test]
fn criterion_04_sem_table_reproduction() {
    let start = Instant::now();
    let methods: Vec<PredictorMode> = ["2k.SEM", "2k.SSCM", "2k.FULL"].iter().map(|m| m.parse().unwrap()).collect();
    let rep = run_experiment(&table_config(ModelKind::Sem), &methods, DPolicy::Fixed { d: 2 }).unwrap();
    let (sem, sscm, full) = (mean(&rep, "2k.SEM"), mean(&rep, "2k.SSCM"), mean(&rep, "2k.FULL"));
    let (share_sem, share_sscm) = (pairwise_share(&rep, "2k.SEM", "2k.FULL"), pairwise_share(&rep, "2k.SSCM", "2k.FULL"));
    let part_a = sem < full && sscm < full && share_sem >= 0.9 && share_sscm >= 0.9;
    let part_b = (0.003..=0.015).contains(&sem);
    let pass = part_a && part_b;
    report(
        4,
        pass,
        format!(
            "(a) {} mean 2k.SEM {sem:.4}, 2k.SSCM {sscm:.4}, 2k.FULL {full:.4}, pairwise wins {share_sem:.2}/{share_sscm:.2}; \
             (b) {} 2k.SEM in [0.003, 0.015]; {:.0} s",
            if part_a { "ok" } else { "failed" },
            if part_b { "ok" } else { "failed" },
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_sscm_table_check() {
    let start = Instant::now();
    let methods: Vec<PredictorMode> = ["2k.SSCM", "2k.FULL"].iter().map(|m| m.parse().unwrap()).collect();
    let rep = run_experiment(&table_config(ModelKind::Sscm), &methods, DPolicy::Fixed { d: 2 }).unwrap();
    let (sscm, full) = (mean(&rep, "2k.SSCM"), mean(&rep, "2k.FULL"));
    let ordered = sscm < full;
    let in_range = (0.004..=0.016).contains(&sscm);
    let pass = ordered && in_range;
    report(
        5,
        pass,
        format!(
            "mean 2k.SSCM {sscm:.4} vs 2k.FULL {full:.4} ({}); 2k.SSCM in [0.004, 0.016] {}; {:.0} s",
            if ordered { "ok" } else { "failed" },
            if in_range { "ok" } else { "failed" },
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_parameter_recovery() {
    let start = Instant::now();
    // Default resolution (20 points per two decades), anchored at the truth.
    let step = 100f64.powf(1.0 / 19.0);
    let lambda_grid: Vec<f64> = (-10..=20).map(|k| 0.1 * step.powi(k)).collect();
    let truth_index = 10;
    let spec = BasisSpec::polynomial(2);
    let (mut lambda_hits, mut theta_hits) = (0, 0);
    let (mut lambdas, mut thetas) = (Vec::new(), Vec::new());
    for rep in 0..20 {
        let cfg = |model| SimConfig {
            p: 8,
            reps: 20,
            ..SimConfig::new(model, 606)
        };
        let s = simulate_replication(&cfg(ModelKind::Sscm), rep).unwrap().sample;
        let fit = fit_model(&s, &spec, 2, &SpatialModel::Sscm { lambda_grid: lambda_grid.clone() }).unwrap();
        let lambda = fit.lambda_hat().unwrap();
        let idx = lambda_grid.iter().position(|&v| v == lambda).unwrap();
        lambda_hits += usize::from(idx.abs_diff(truth_index) <= 1);
        lambdas.push(lambda);

        let s = simulate_replication(&cfg(ModelKind::Sem), rep).unwrap().sample;
        let model = SpatialModel::Sem { theta_grid: default_theta_grid(), d_max: None };
        let theta = fit_model(&s, &spec, 2, &model).unwrap().theta_hat().unwrap();
        theta_hits += usize::from((theta - 0.8).abs() <= 0.05 + 1e-9);
        thetas.push(theta);
    }
    lambdas.sort_by(f64::total_cmp);
    thetas.sort_by(f64::total_cmp);
    let pass = lambda_hits >= 16 && theta_hits >= 16;
    report(
        6,
        pass,
        format!(
            "lambda within one step {lambda_hits}/20 (median estimate {:.3}), theta within one step {theta_hits}/20 \
             (median {:.2}); {:.0} s",
            lambdas[10],
            thetas[10],
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_dimension_selection() {
    let start = Instant::now();
    let cfg = SimConfig {
        p: 8,
        reps: 20,
        ..SimConfig::new(ModelKind::Sem, 707)
    };
    let spec = BasisSpec::polynomial(2);
    let mut hits = [0usize; 4];
    for rep in 0..20 {
        let data = simulate_replication(&cfg, rep).unwrap();
        let s = &data.sample;
        let model = SpatialModel::with_default_grid(ModelKind::Sem, s).unwrap();
        let ll = rank_logliks(s, &spec, &model).unwrap();
        let picks = [
            select_lr(&ll, 8, 2, DEFAULT_ALPHA).unwrap().d_star,
            select_ic(&ll, 8, 2, s.n(), Criterion::Aic).unwrap().d_star,
            select_ic(&ll, 8, 2, s.n(), Criterion::Bic).unwrap().d_star,
            select_cv(s, &model, &spec, &CvOptions { seed: data.cv_seed, ..CvOptions::default() })
                .unwrap()
                .d_star,
        ];
        for (h, d) in hits.iter_mut().zip(picks) {
            *h += usize::from(d == 2);
        }
    }
    let pass = hits[..3].iter().all(|&h| h >= 14) && hits[3] >= 10;
    report(
        7,
        pass,
        format!(
            "d = 2 chosen by LR {}/20, AIC {}/20, BIC {}/20 (need 14), CV-MPE {}/20 (need 10); {:.0} s",
            hits[0],
            hits[1],
            hits[2],
            hits[3],
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_predictor_invariants() {
    let s = sample(ModelKind::Sem, 808, 150, 6, 2, 2);
    let fit = fit_model(&s, &BasisSpec::polynomial(2), 2, &SpatialModel::with_default_grid(ModelKind::Sem, &s).unwrap())
        .unwrap();
    let reference = TrainingReference::reduced(&fit, &s).unwrap();
    let (y_min, y_max) = s.y().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    let spread = reference.points.amax();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rotation = DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
    if rng.random::<bool>() {
        rotation.column_mut(0).neg_mut();
    }
    let rotated = TrainingReference::new(&reference.points * &rotation, reference.responses.clone(), reference.coords.clone())
        .unwrap();
    let mut failures = Vec::new();
    for q in 0..1000 {
        let query: Vec<f64> = (0..2).map(|_| rng.random_range(-spread..spread)).collect();
        let s0 = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let h1 = 10f64.powf(rng.random_range(-1.5..0.7)) * spread;
        let h2 = 10f64.powf(rng.random_range(-2.0..0.5));
        let w1 = nw_weights_1k(&query, &reference, h1).unwrap();
        let w2 = nw_weights_2k(&query, s0, &reference, h1, h2).unwrap();
        for w in [&w1, &w2] {
            let sum: f64 = w.values.iter().sum();
            if w.values.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-12 {
                failures.push(format!("query {q}: weights sum {sum}"));
            }
        }
        let one = predict_point(&query, s0, Bandwidths { h1, h2: None }, &reference).unwrap().y_hat;
        let wide = predict_point(&query, s0, Bandwidths { h1, h2: Some(1e12) }, &reference).unwrap().y_hat;
        if (one - wide).abs() > 1e-9 {
            failures.push(format!("query {q}: 1k {one} vs 2k wide {wide}"));
        }
        let two = predict_point(&query, s0, Bandwidths { h1, h2: Some(h2) }, &reference).unwrap().y_hat;
        for v in [one, two] {
            if v < y_min - 1e-12 || v > y_max + 1e-12 {
                failures.push(format!("query {q}: prediction {v} outside the response range"));
            }
        }
        let turned: Vec<f64> = (DMatrix::from_row_slice(1, 2, &query) * &rotation).iter().copied().collect();
        let rot = predict_point(&turned, s0, Bandwidths { h1, h2: Some(h2) }, &rotated).unwrap().y_hat;
        if (rot - two).abs() > 1e-9 {
            failures.push(format!("query {q}: rotated prediction {rot} vs {two}"));
        }
    }
    // The reduction used by the predictor spans the same space either way.
    let mode = PredictorMode::new(Kernels::Two, PredictorSpace::Reduced(ModelKind::Sem));
    let pass = failures.is_empty();
    report(
        8,
        pass,
        format!(
            "1000 random queries on {mode}: {} violations{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_likelihood_monotone_in_rank() {
    let mut violations = Vec::new();
    let mut checked = 0;
    for kind in [ModelKind::Independent, ModelKind::Sscm, ModelKind::Sem] {
        for k in 0..20u64 {
            let (p, r) = [(6, 3), (3, 4), (5, 2), (2, 2)][k as usize % 4];
            let data_model = if kind == ModelKind::Sscm { ModelKind::Sscm } else { ModelKind::Sem };
            let s = sample(data_model, 900 + k, 70, p, r, 1);
            let spec = BasisSpec::polynomial(r);
            let model = SpatialModel::with_default_grid(kind, &s).unwrap();
            let table = rank_loglik_table(&s, &spec, &model).unwrap();
            let profile = rank_logliks(&s, &spec, &model).unwrap();
            let mut rows: Vec<Vec<f64>> = (0..table[0].len()).map(|g| table.iter().map(|row| row[g]).collect()).collect();
            rows.push(profile);
            for row in rows {
                checked += 1;
                for delta in 1..row.len() {
                    let slack = 1e-10 * row[delta - 1].abs().max(1.0);
                    if row[delta] < row[delta - 1] - slack {
                        violations.push(format!("{kind:?} dataset {k}: rank {} -> {delta}", delta - 1));
                    }
                }
            }
        }
    }
    let pass = violations.is_empty();
    report(
        9,
        pass,
        format!(
            "{checked} likelihood sequences over 60 datasets, {} decreases{}",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_simulate_is_deterministic() {
    let dir = tempfile::TempDir::new().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_spsdr"))
            .args([
                "simulate", "--model", "sem", "--n", "100", "--p", "5", "--reps", "3", "--d-policy", "bic", "--seed",
                "10", "--out",
            ])
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(out).unwrap()
    };
    let (a, b) = (run("a.json"), run("b.json"));
    let pass = a == b && !a.is_empty();
    report(10, pass, format!("two runs, {} bytes each, identical: {}", a.len(), a == b));
    assert!(pass);
}
