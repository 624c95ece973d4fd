//! Monte Carlo experiments: coverage, median length and empirical power of
//! the compared confidence-set procedures.

use rayon::prelude::*;
use serde::Serialize;

use super::{
    calibrate_gamma, draw_responses, generate_with_rng, replicate_rng, Case, Method, SimConfig,
};
use crate::distributions::f_quantile;
use crate::error::{Error, Result};
use crate::interval::RealIntervalSet;
use crate::model::{InstrumentFactor, ProjectionBasis, SubsetSpec};
use crate::power::PowerSpec;
use crate::stats::ar_value;
use crate::union::{analyze_with_basis, subset_ci, AnalysisConfig};

/// Fewest replicates for which the experiments report MC standard errors.
pub const MIN_REPS: usize = 200;

/// Confidence sets of every method on every replicate of one design.
#[derive(Debug, Clone)]
pub struct ReplicateSets {
    pub config: SimConfig,
    pub methods: Vec<Method>,
    /// `sets[m][r]`: method `m` on replicate `r`.
    pub sets: Vec<Vec<RealIntervalSet>>,
    /// Replicates on which each method produced at least one warning.
    pub warned: Vec<usize>,
}

fn method_config(method: &Method, sim: &SimConfig, template: &AnalysisConfig) -> AnalysisConfig {
    let mut cfg = template.clone();
    cfg.test = method.test;
    cfg.pretest = method.pretest;
    cfg.u = match method.case {
        Case::Naive => 1,
        Case::Ours | Case::Oracle => sim.u,
    };
    cfg
}

fn method_set(
    method: &Method,
    basis: &ProjectionBasis,
    invalid: &SubsetSpec,
    cfg: &AnalysisConfig,
) -> Result<(RealIntervalSet, bool)> {
    match method.case {
        Case::Oracle => {
            let rec = subset_ci(basis, invalid, cfg)?;
            let set = rec.interval.unwrap_or_default();
            Ok((set, rec.possibly_infinite))
        }
        Case::Naive | Case::Ours => {
            let report = analyze_with_basis(basis, cfg)?;
            let warned = !report.warnings.is_empty();
            Ok((report.interval_set, warned))
        }
    }
}

fn check_reps(config: &SimConfig) -> Result<()> {
    config.validate()?;
    if config.reps < MIN_REPS {
        return Err(Error::Config(format!(
            "experiments need reps >= {MIN_REPS}, got {}",
            config.reps
        )));
    }
    Ok(())
}

/// Runs `config.reps` replicates of the design with `config.s` invalid
/// instruments and records every method's confidence set. `template`
/// supplies the levels and CLR settings; its test, `U` and pretest flag are
/// replaced per method.
pub fn replicate_sets(
    config: &SimConfig,
    methods: &[Method],
    template: &AnalysisConfig,
) -> Result<ReplicateSets> {
    check_reps(config)?;
    if methods.is_empty() {
        return Err(Error::Config("no methods to simulate".into()));
    }
    let gamma = calibrate_gamma(config)?;
    let invalid = config.invalid_set()?;
    let cfgs: Vec<AnalysisConfig> = methods
        .iter()
        .map(|m| method_config(m, config, template))
        .collect();

    let per_rep: Vec<Vec<(RealIntervalSet, bool)>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(config.seed, config.s, rep);
            let (data, _) = generate_with_rng(config, &gamma, &mut rng)?;
            let basis = ProjectionBasis::new(&data)?;
            methods
                .iter()
                .zip(&cfgs)
                .map(|(m, cfg)| method_set(m, &basis, &invalid, cfg))
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut sets = vec![Vec::with_capacity(config.reps); methods.len()];
    let mut warned = vec![0; methods.len()];
    for row in per_rep {
        for (m, (set, flag)) in row.into_iter().enumerate() {
            sets[m].push(set);
            warned[m] += flag as usize;
        }
    }
    Ok(ReplicateSets {
        config: config.clone(),
        methods: methods.to_vec(),
        sets,
        warned,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub method: Method,
    pub s: usize,
    pub reps: usize,
    /// Fraction of replicates whose set contains `beta*`.
    pub coverage: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthRow {
    pub method: Method,
    pub s: usize,
    pub reps: usize,
    /// Median total length; `inf` when more than half the sets are unbounded.
    #[serde(serialize_with = "crate::simulation::report::ser_extended")]
    pub median_length: f64,
    pub finite_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRow {
    pub method: Method,
    pub s: usize,
    pub beta0: f64,
    /// Fraction of replicates rejecting `beta* = beta0`.
    pub rejection: f64,
    pub mc_se: f64,
}

fn proportion_se(p: f64, reps: usize) -> f64 {
    (p * (1.0 - p) / reps as f64).sqrt()
}

/// Median of lengths that may be `+inf`.
pub fn median_length(lengths: &[f64]) -> f64 {
    let mut v = lengths.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        let (a, b) = (v[n / 2 - 1], v[n / 2]);
        if a.is_finite() && b.is_finite() {
            0.5 * (a + b)
        } else {
            f64::INFINITY
        }
    }
}

impl ReplicateSets {
    pub fn coverage(&self) -> Vec<CoverageRow> {
        let reps = self.config.reps;
        self.methods
            .iter()
            .zip(&self.sets)
            .map(|(m, sets)| {
                let hits = sets
                    .iter()
                    .filter(|s| s.contains(self.config.beta_star))
                    .count();
                let p = hits as f64 / reps as f64;
                CoverageRow {
                    method: *m,
                    s: self.config.s,
                    reps,
                    coverage: p,
                    mc_se: proportion_se(p, reps),
                }
            })
            .collect()
    }

    pub fn lengths(&self) -> Vec<LengthRow> {
        let reps = self.config.reps;
        self.methods
            .iter()
            .zip(&self.sets)
            .map(|(m, sets)| {
                let lengths: Vec<f64> = sets.iter().map(RealIntervalSet::total_length).collect();
                let finite = lengths.iter().filter(|l| l.is_finite()).count();
                LengthRow {
                    method: *m,
                    s: self.config.s,
                    reps,
                    median_length: median_length(&lengths),
                    finite_fraction: finite as f64 / reps as f64,
                }
            })
            .collect()
    }

    pub fn power(&self, beta0_grid: &[f64]) -> Vec<PowerRow> {
        let reps = self.config.reps;
        let mut rows = Vec::with_capacity(self.methods.len() * beta0_grid.len());
        for (m, sets) in self.methods.iter().zip(&self.sets) {
            for &b in beta0_grid {
                let rejected = sets.iter().filter(|s| !s.contains(b)).count();
                let p = rejected as f64 / reps as f64;
                rows.push(PowerRow {
                    method: *m,
                    s: self.config.s,
                    beta0: b,
                    rejection: p,
                    mc_se: proportion_se(p, reps),
                });
            }
        }
        rows
    }
}

/// Fraction of replicates whose set for each method contains `beta*`.
pub fn coverage_experiment(
    config: &SimConfig,
    methods: &[Method],
    template: &AnalysisConfig,
) -> Result<Vec<CoverageRow>> {
    Ok(replicate_sets(config, methods, template)?.coverage())
}

/// Median total length of each method's sets, with the finite fraction.
pub fn length_experiment(
    config: &SimConfig,
    methods: &[Method],
    template: &AnalysisConfig,
) -> Result<Vec<LengthRow>> {
    Ok(replicate_sets(config, methods, template)?.lengths())
}

/// Rejection rate of `beta* = beta0` for each method at every grid point.
pub fn power_experiment(
    config: &SimConfig,
    methods: &[Method],
    template: &AnalysisConfig,
    beta0_grid: &[f64],
) -> Result<Vec<PowerRow>> {
    if beta0_grid.is_empty() {
        return Err(Error::Config(
            "power experiment needs a non-empty beta0 grid".into(),
        ));
    }
    Ok(replicate_sets(config, methods, template)?.power(beta0_grid))
}

/// Monte Carlo rejection rate of `AR(spec.beta0, spec.subset)` with the
/// instruments held at `spec.design` and fresh errors per replicate.
/// Returns `(rate, mc_se)`.
pub fn mc_power_fixed_design(spec: &PowerSpec, reps: usize, seed: u64) -> Result<(f64, f64)> {
    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    let (n, l) = spec.design.shape();
    let sim = SimConfig {
        n,
        l,
        beta_star: spec.beta_star,
        sigma1: spec.sigma1,
        sigma2: spec.sigma2,
        rho: spec.rho,
        ..SimConfig::default()
    };
    crate::power::noncentrality(spec)?;
    let factor = InstrumentFactor::new(&spec.design);
    let df = (spec.subset.complement_size(), n - l);
    let critical = f_quantile(1.0 - spec.alpha, df.0, df.1)?;
    let rejections: usize = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed, 0, rep);
            let (y, d) = draw_responses(&sim, &spec.design, &spec.pi, &spec.gamma, &mut rng);
            let cache = factor.basis(&y, &d)?.cache(&spec.subset)?;
            Ok((ar_value(spec.beta0, &cache)? > critical) as usize)
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    let p = rejections as f64 / reps as f64;
    Ok((p, proportion_se(p, reps)))
}
