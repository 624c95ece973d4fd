//! Distribution functions against quadrature and series oracles written
//! from the densities.

use robust_iv::distributions::{
    chi_square_cdf, chi_square_quantile, f_cdf, f_quantile, noncentral_f_cdf, normal_cdf,
    DistParams,
};

/// Lanczos (g = 7, n = 9) log-gamma.
fn ln_gamma(x: f64) -> f64 {
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

fn f_density(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let ln = 0.5 * d1 * (d1 / d2).ln() + (0.5 * d1 - 1.0) * x.ln()
        - 0.5 * (d1 + d2) * (1.0 + d1 * x / d2).ln()
        - (ln_gamma(0.5 * d1) + ln_gamma(0.5 * d2) - ln_gamma(0.5 * (d1 + d2)));
    ln.exp()
}

/// Composite Simpson rule on `[0, x]` after the substitution `t = u^2`,
/// which removes the `t^{-1/2}` singularity at zero when `d1 = 1`.
fn f_cdf_quadrature(x: f64, d1: f64, d2: f64) -> f64 {
    let m = 20_000;
    let b = x.sqrt();
    let h = b / m as f64;
    let g = |u: f64| 2.0 * u * f_density(u * u, d1, d2);
    // The integrand has a finite nonzero limit at 0 when d1 = 1.
    let mut s = g(1e-12) + g(b);
    for i in 1..m {
        s += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Poisson(lambda / 2) mixture of central F laws with inflated numerator df.
fn nc_f_oracle(x: f64, d1: f64, d2: f64, lambda: f64) -> f64 {
    let mut total = 0.0;
    for j in 0..200 {
        let jf = j as f64;
        let w = (-0.5 * lambda + jf * (0.5 * lambda).ln() - ln_gamma(jf + 1.0)).exp();
        if j > 5 && w < 1e-16 {
            break;
        }
        let df = d1 + 2.0 * jf;
        total += w * f_cdf_quadrature(x * d1 / df, df, d2);
    }
    total
}

#[test]
fn central_f_matches_quadrature() {
    for &(x, d1, d2) in &[
        (1.83, 10, 4990),
        (0.5, 1, 30),
        (2.4, 3, 100),
        (4.0, 5, 12),
        (1.0, 2, 2),
    ] {
        let got = f_cdf(x, d1, d2).unwrap();
        let want = f_cdf_quadrature(x, d1 as f64, d2 as f64);
        assert!(
            (got - want).abs() < 1e-9,
            "F({d1},{d2}) at {x}: {got} vs {want}"
        );
    }
    let p = f_cdf(1.83, 10, 4990).unwrap();
    assert!((p - 0.95).abs() < 0.005, "{p}");
}

#[test]
fn noncentral_f_matches_poisson_mixture() {
    for &(x, d1, d2, lam) in &[
        (1.5, 4, 200, 3.0),
        (2.64, 2, 50, 10.0),
        (0.8, 6, 1000, 0.5),
        (3.0, 1, 40, 25.0),
    ] {
        let got = noncentral_f_cdf(x, DistParams::new(d1, d2, lam).unwrap()).unwrap();
        let want = nc_f_oracle(x, d1 as f64, d2 as f64, lam);
        assert!(
            (got - want).abs() < 1e-8,
            "ncF({d1},{d2},{lam}) at {x}: {got} vs {want}"
        );
    }
}

#[test]
fn zero_noncentrality_is_central() {
    for &(x, d1, d2) in &[(0.2, 1, 10), (1.0, 3, 57), (2.2, 10, 4990), (7.0, 5, 8)] {
        let nc = noncentral_f_cdf(x, DistParams::new(d1, d2, 0.0).unwrap()).unwrap();
        assert!((nc - f_cdf(x, d1, d2).unwrap()).abs() <= 1e-10);
    }
}

#[test]
fn chi_square_one_is_squared_normal() {
    for x in [0.01f64, 0.5, 1.0, 3.841_458_820_694_124, 9.0] {
        let want = 2.0 * normal_cdf(x.sqrt()) - 1.0;
        assert!((chi_square_cdf(x, 1, 0.0).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn quantile_round_trips_on_twenty_points() {
    let mut n = 0;
    for &(d1, d2) in &[(1, 20), (2, 57), (5, 4985), (9, 300)] {
        for &p in &[0.01, 0.1, 0.5, 0.95, 0.99] {
            let x = f_quantile(p, d1, d2).unwrap();
            assert!(
                (f_cdf(x, d1, d2).unwrap() - p).abs() <= 1e-8,
                "F({d1},{d2}) p={p}"
            );
            let c = chi_square_quantile(p, d1).unwrap();
            assert!(
                (chi_square_cdf(c, d1, 0.0).unwrap() - p).abs() <= 1e-8,
                "chi2({d1}) p={p}"
            );
            n += 1;
        }
    }
    assert_eq!(n, 20);
}
