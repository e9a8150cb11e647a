//! Independent numeric oracles for checking the closed-form estimators.
//!
//! Nothing here is used by the estimators themselves.

use nalgebra::{DMatrix, DVector};

/// Minimizes `f` with the Nelder–Mead simplex method from `x0`, using an
/// initial simplex of axis steps `step`. Returns the best point and value.
pub fn nelder_mead(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_evals: usize,
    tol: f64,
) -> (Vec<f64>, f64) {
    let k = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..k {
        let mut v = x0.to_vec();
        v[i] += if v[i].abs() > 1e-8 { step * v[i].abs().max(1.0) } else { step };
        simplex.push(v);
    }
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();
    let mut evals = k + 1;
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=k).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if (values[k] - values[0]).abs() <= tol * (values[0].abs() + tol) {
            break;
        }
        let centroid: Vec<f64> = (0..k)
            .map(|j| simplex[..k].iter().map(|x| x[j]).sum::<f64>() / k as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..k)
                .map(|j| centroid[j] + t * (simplex[k][j] - centroid[j]))
                .collect()
        };
        let reflected = along(-1.0);
        let fr = eval(&reflected);
        evals += 1;
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = eval(&expanded);
            evals += 1;
            if fe < fr {
                simplex[k] = expanded;
                values[k] = fe;
            } else {
                simplex[k] = reflected;
                values[k] = fr;
            }
        } else if fr < values[k - 1] {
            simplex[k] = reflected;
            values[k] = fr;
        } else {
            let contracted = if fr < values[k] { along(-0.5) } else { along(0.5) };
            let fc = eval(&contracted);
            evals += 1;
            if fc < values[k].min(fr) {
                simplex[k] = contracted;
                values[k] = fc;
            } else {
                for i in 1..=k {
                    simplex[i] = (0..k)
                        .map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]))
                        .collect();
                    values[i] = eval(&simplex[i]);
                }
                evals += k;
            }
        }
    }
    let best = (0..=k)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap();
    (simplex[best].clone(), values[best])
}

/// Gaussian log-likelihood of `X` (n x p) with mean rows `mu' + f_i' C'`
/// and covariance `S ⊗ Δ`, evaluated densely from `S^{-1}` and `log|S|`.
pub fn direct_loglik(
    x: &DMatrix<f64>,
    f: &DMatrix<f64>,
    s_inv: &DMatrix<f64>,
    log_det_s: f64,
    mu: &DVector<f64>,
    c: &DMatrix<f64>,
    delta: &DMatrix<f64>,
) -> f64 {
    let (n, p) = (x.nrows() as f64, x.ncols() as f64);
    let Some(chol) = delta.clone().cholesky() else {
        return f64::NEG_INFINITY;
    };
    let log_det_delta: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let mut resid = x - f * c.transpose();
    for mut row in resid.row_iter_mut() {
        row -= mu.transpose();
    }
    let quad = (chol.inverse() * resid.transpose() * s_inv * &resid).trace();
    -0.5 * n * p * (2.0 * std::f64::consts::PI).ln() - 0.5 * p * log_det_s - 0.5 * n * log_det_delta - 0.5 * quad
}

/// Parameter vector layout for [`direct_loglik`] with `d = 1`:
/// `mu (p)`, `a (p)`, `b (r)`, then the lower Cholesky factor of `Δ` with
/// log-diagonal, row by row.
pub fn unpack_rank_one(theta: &[f64], p: usize, r: usize) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mu = DVector::from_column_slice(&theta[..p]);
    let a = DMatrix::from_column_slice(p, 1, &theta[p..2 * p]);
    let b = DMatrix::from_row_slice(1, r, &theta[2 * p..2 * p + r]);
    let mut l = DMatrix::zeros(p, p);
    let mut k = 2 * p + r;
    for i in 0..p {
        for j in 0..=i {
            l[(i, j)] = if i == j { theta[k].exp() } else { theta[k] };
            k += 1;
        }
    }
    (mu, a * b, &l * l.transpose())
}

/// Inverse of [`unpack_rank_one`] given a covariance to factor.
pub fn pack_rank_one(mu: &DVector<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, delta: &DMatrix<f64>) -> Vec<f64> {
    let p = mu.len();
    let mut out: Vec<f64> = mu.iter().copied().collect();
    out.extend(a.column(0).iter());
    out.extend(b.row(0).iter());
    let l = delta.clone().cholesky().expect("positive definite").l();
    for i in 0..p {
        for j in 0..=i {
            out.push(if i == j { l[(i, j)].ln() } else { l[(i, j)] });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2) + 3.0;
        let (x, v) = nelder_mead(f, &[0.0, 0.0], 0.5, 5000, 1e-14);
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] + 2.0).abs() < 1e-5);
        assert!((v - 3.0).abs() < 1e-9);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let (x, _) = nelder_mead(f, &[-1.2, 1.0], 0.5, 20000, 1e-16);
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn pack_round_trip() {
        let mu = DVector::from_vec(vec![0.5, -1.0]);
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let b = DMatrix::from_row_slice(1, 1, &[0.3]);
        let delta = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let theta = pack_rank_one(&mu, &a, &b, &delta);
        let (m2, c2, d2) = unpack_rank_one(&theta, 2, 1);
        assert!((m2 - mu).norm() < 1e-14);
        assert!((c2 - a * b).norm() < 1e-14);
        assert!((d2 - delta).norm() < 1e-12);
    }
}
