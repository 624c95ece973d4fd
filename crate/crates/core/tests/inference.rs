//! Size, uniformity and invariance of the tests and the union procedure.

use nalgebra::DMatrix;
use rayon::prelude::*;
use robust_iv::inversion::{grid_invert, invert_ar, GridSpec};
use robust_iv::simulation::{calibrate_gamma, generate_with_rng, replicate_rng, SimConfig};
use robust_iv::{
    ar_statistic, clr_statistic, robust_ci, sargan_statistic, tsls_fit, AnalysisConfig, IvDataset,
    ProjectionBasis, SubsetSpec, TestKind,
};

fn design(n: usize, l: usize, s: usize, conc: f64) -> SimConfig {
    SimConfig {
        n,
        l,
        s,
        u: 2,
        concentration_target: conc,
        ..SimConfig::default()
    }
}

fn draw(cfg: &SimConfig, seed: u64, rep: usize) -> IvDataset {
    let gamma = calibrate_gamma(cfg).unwrap();
    generate_with_rng(cfg, &gamma, &mut replicate_rng(seed, cfg.s, rep))
        .unwrap()
        .0
}

/// Kolmogorov-Smirnov distance of a sample from U(0, 1).
fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn ar_p_values_are_uniform_under_the_null() {
    let cfg = design(200, 4, 1, 3.0);
    let b = SubsetSpec::new(vec![0], 4).unwrap();
    let p: Vec<f64> = (0..1000)
        .into_par_iter()
        .map(|rep| {
            let data = draw(&cfg, 5, rep);
            let cache = ProjectionBasis::new(&data).unwrap().cache(&b).unwrap();
            ar_statistic(cfg.beta_star, &cache, 0.05).unwrap().p_value
        })
        .collect();
    // 1% critical value of the KS distance for n = 1000.
    let d = ks_uniform(p);
    assert!(d < 1.63 / 1000f64.sqrt(), "KS distance {d}");
}

fn rejection_rate(reps: usize, f: impl Fn(usize) -> bool + Sync) -> f64 {
    (0..reps).into_par_iter().filter(|&r| f(r)).count() as f64 / reps as f64
}

#[test]
fn sargan_has_nominal_size_with_valid_complement() {
    let cfg = design(500, 5, 2, 50.0);
    let b = SubsetSpec::new(vec![0, 1], 5).unwrap();
    let rate = rejection_rate(1000, |rep| {
        let cache = ProjectionBasis::new(&draw(&cfg, 6, rep))
            .unwrap()
            .cache(&b)
            .unwrap();
        let fit = tsls_fit(&cache).unwrap();
        sargan_statistic(&cache, &fit, 0.05).unwrap().rejects(0.05)
    });
    assert!(
        (rate - 0.05).abs() < 3.0 * (0.05f64 * 0.95 / 1000.0).sqrt(),
        "size {rate}"
    );
}

#[test]
fn sargan_detects_an_invalid_complement() {
    let cfg = design(500, 5, 2, 50.0);
    let b = SubsetSpec::new(vec![0], 5).unwrap();
    let rate = rejection_rate(200, |rep| {
        let cache = ProjectionBasis::new(&draw(&cfg, 6, rep))
            .unwrap()
            .cache(&b)
            .unwrap();
        let fit = tsls_fit(&cache).unwrap();
        sargan_statistic(&cache, &fit, 0.05).unwrap().rejects(0.05)
    });
    assert!(rate > 0.9, "power {rate}");
}

#[test]
fn clr_has_nominal_size_with_weak_instruments() {
    let cfg = design(300, 4, 1, 2.0);
    let b = SubsetSpec::new(vec![0], 4).unwrap();
    let rate = rejection_rate(600, |rep| {
        let cache = ProjectionBasis::new(&draw(&cfg, 8, rep))
            .unwrap()
            .cache(&b)
            .unwrap();
        clr_statistic(cfg.beta_star, &cache, 0.05, 4000, 1)
            .unwrap()
            .rejects(0.05)
    });
    assert!(
        (rate - 0.05).abs() < 3.0 * (0.05f64 * 0.95 / 600.0).sqrt(),
        "size {rate}"
    );
}

#[test]
fn closed_form_ar_matches_grid_inversion() {
    for rep in 0..6 {
        let cfg = design(150, 3, 1, if rep % 2 == 0 { 40.0 } else { 1.5 });
        let data = draw(&cfg, 9, rep);
        let cache = ProjectionBasis::new(&data)
            .unwrap()
            .cache(&SubsetSpec::new(vec![0], 3).unwrap())
            .unwrap();
        let closed = invert_ar(&cache, 0.05).unwrap();
        let grid = GridSpec::new(-20.0, 20.0, 1e-3).unwrap();
        let inv = grid_invert(|b| Ok(ar_statistic(b, &cache, 0.05)?.p_value), 0.05, &grid).unwrap();
        for x in grid.points().step_by(7) {
            let near_end = closed
                .intervals()
                .iter()
                .any(|iv| (iv.lo - x).abs() < 2e-3 || (iv.hi - x).abs() < 2e-3);
            if !near_end {
                assert_eq!(
                    closed.contains(x),
                    inv.set.contains(x),
                    "rep {rep} at {x}: {closed} vs {}",
                    inv.set
                );
            }
        }
    }
}

#[test]
fn union_is_invariant_to_instrument_order() {
    let cfg = design(400, 5, 2, 60.0);
    let data = draw(&cfg, 10, 0);
    let perm = [3, 0, 4, 2, 1];
    let z = data.z();
    let zp = DMatrix::from_fn(z.nrows(), 5, |i, j| z[(i, perm[j])]);
    let permuted = IvDataset::new(data.y().clone(), data.d().clone(), zp, None).unwrap();
    for test in TestKind::ALL {
        for pretest in [false, true] {
            let cfg = AnalysisConfig {
                pretest,
                ..AnalysisConfig::new(test, 3)
            };
            let a = robust_ci(&data, &cfg).unwrap().interval_set;
            let b = robust_ci(&permuted, &cfg).unwrap().interval_set;
            let ea: Vec<f64> = a.intervals().iter().flat_map(|i| [i.lo, i.hi]).collect();
            let eb: Vec<f64> = b.intervals().iter().flat_map(|i| [i.lo, i.hi]).collect();
            assert_eq!(ea.len(), eb.len(), "{test:?} pretest={pretest}: {a} vs {b}");
            for (x, y) in ea.iter().zip(&eb) {
                if x.is_finite() {
                    // CLR endpoints are bisection-refined to 1e-6.
                    assert!(
                        (x - y).abs() < 1e-5,
                        "{test:?} pretest={pretest}: {a} vs {b}"
                    );
                } else {
                    assert_eq!(x, y);
                }
            }
        }
    }
}

#[test]
fn ar_set_shifts_with_the_outcome() {
    let cfg = design(300, 4, 1, 30.0);
    let data = draw(&cfg, 11, 0);
    let c = 0.75;
    let shifted = IvDataset::new(
        data.y() + data.d() * c,
        data.d().clone(),
        data.z().clone(),
        None,
    )
    .unwrap();
    let config = AnalysisConfig::new(TestKind::Ar, 2);
    let a = robust_ci(&data, &config).unwrap().interval_set;
    let b = robust_ci(&shifted, &config).unwrap().interval_set;
    for (x, y) in a.intervals().iter().zip(b.intervals()) {
        assert!(
            (x.lo + c - y.lo).abs() < 1e-8 && (x.hi + c - y.hi).abs() < 1e-8,
            "{a} vs {b}"
        );
    }
}

#[test]
fn union_contains_every_subset_interval() {
    let cfg = design(300, 5, 1, 20.0);
    for rep in 0..5 {
        let data = draw(&cfg, 12, rep);
        for test in TestKind::ALL {
            for pretest in [false, true] {
                let config = AnalysisConfig {
                    pretest,
                    ..AnalysisConfig::new(test, 2)
                };
                assert!(robust_ci(&data, &config).unwrap().audit());
            }
        }
    }
}

#[test]
fn pretest_shortens_the_tsls_union_with_an_invalid_instrument() {
    let cfg = SimConfig { s: 1, u: 5, ..SimConfig::default() };
    let gamma = calibrate_gamma(&cfg).unwrap();
    let plain = AnalysisConfig::new(TestKind::Tsls, 5);
    let pretested = plain.clone().with_pretest();
    let reps = 500;
    let shorter = (0..reps)
        .into_par_iter()
        .filter(|&rep| {
            let data = generate_with_rng(&cfg, &gamma, &mut replicate_rng(13, 1, rep)).unwrap().0;
            let basis = ProjectionBasis::new(&data).unwrap();
            let a = robust_iv::analyze_with_basis(&basis, &plain).unwrap();
            let b = robust_iv::analyze_with_basis(&basis, &pretested).unwrap();
            b.interval_set.total_length() <= a.interval_set.total_length()
        })
        .count();
    assert!(shorter * 2 >= reps, "pretest shorter in {shorter} of {reps}");
}
