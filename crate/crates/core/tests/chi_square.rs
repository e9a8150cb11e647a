//! Chi-square tail probabilities against an independent regularized
//! incomplete-gamma evaluation.

use spatial_sdr::dimselect::chi_square_sf;

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9.
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let t = x + 7.5;
    let s: f64 = C[0] + (1..9).map(|i| C[i] / (x + i as f64)).sum::<f64>();
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

/// Upper regularized incomplete gamma `Q(a, x)`: power series for
/// `x < a + 1`, Lentz continued fraction otherwise.
fn gamma_q(a: f64, x: f64) -> f64 {
    let prefix = (-x + a * x.ln() - ln_gamma(a)).exp();
    if x < a + 1.0 {
        let (mut term, mut sum, mut ap) = (1.0 / a, 1.0 / a, a);
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        1.0 - sum * prefix
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        prefix * h
    }
}

#[test]
fn critical_value_at_five_percent() {
    let p = chi_square_sf(9.488, 4);
    assert!((p - 0.05).abs() < 1e-4, "{p}");
    assert!((p - gamma_q(2.0, 9.488 / 2.0)).abs() <= 1e-10 * p);
}

#[test]
fn matches_incomplete_gamma_oracle() {
    for q in [1usize, 2, 3, 4, 7, 12, 30, 46] {
        for x in [0.01, 0.5, 1.0, 3.3, 9.488, 20.0, 55.0, 120.0] {
            let expected = gamma_q(q as f64 / 2.0, x / 2.0);
            let got = chi_square_sf(x, q);
            assert!(
                (got - expected).abs() <= 1e-10 * expected.max(1e-300) + 1e-15,
                "q={q} x={x}: {got} vs {expected}"
            );
        }
    }
}

#[test]
fn closed_form_for_two_degrees_of_freedom() {
    for x in [0.1f64, 1.0, 5.0, 30.0] {
        let got = chi_square_sf(x, 2);
        assert!((got - (-x / 2.0).exp()).abs() <= 1e-12 * got);
    }
    assert_eq!(chi_square_sf(0.0, 3), 1.0);
    assert_eq!(chi_square_sf(5.0, 0), 1.0);
}
