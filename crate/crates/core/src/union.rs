//! Robust confidence sets: unions of per-subset confidence sets over every
//! candidate invalid set `B` with `c(B) = U - 1`, optionally screened by a
//! Sargan pretest, and the sensitivity sweep over `U`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::f_quantile;
use crate::error::{Error, Result};
use crate::interval::RealIntervalSet;
use crate::inversion::{
    default_clr_grid, invert_ar_at, invert_clr_with_table, invert_wald, ClrSettings, GridSpec,
};
use crate::model::{IvDataset, ProjectionBasis, ProjectionCache, SubsetSpec};
use crate::stats::{sargan_statistic, tsls_fit, ClrCriticalTable, TestResult};

/// Test inverted inside every subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Ar,
    Tsls,
    Clr,
}

impl TestKind {
    pub const ALL: [TestKind; 3] = [TestKind::Tsls, TestKind::Ar, TestKind::Clr];

    pub fn label(self) -> &'static str {
        match self {
            TestKind::Ar => "AR",
            TestKind::Tsls => "TSLS",
            TestKind::Clr => "CLR",
        }
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ar" => Ok(TestKind::Ar),
            "tsls" | "wald" => Ok(TestKind::Tsls),
            "clr" => Ok(TestKind::Clr),
            other => Err(Error::Config(format!(
                "unknown test {other:?} (expected ar, tsls or clr)"
            ))),
        }
    }
}

/// Settings for one robust interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub alpha: f64,
    /// Pretest level.
    pub alpha1: f64,
    /// Level of the per-subset sets when pretesting; `alpha1 + alpha2 = alpha`.
    pub alpha2: f64,
    /// Bound on the number of invalid instruments plus one.
    pub u: usize,
    pub test: TestKind,
    pub pretest: bool,
    pub clr: ClrSettings,
    /// CLR grid; `None` centres a grid on each subset's TSLS estimate.
    pub clr_grid: Option<GridSpec>,
}

impl AnalysisConfig {
    pub fn new(test: TestKind, u: usize) -> Self {
        Self {
            alpha: 0.05,
            alpha1: 0.01,
            alpha2: 0.04,
            u,
            test,
            pretest: false,
            clr: ClrSettings::default(),
            clr_grid: None,
        }
    }

    pub fn with_pretest(mut self) -> Self {
        self.pretest = true;
        self
    }

    /// Sets `alpha` and rescales the pretest split to the default 1:4 ratio.
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self.alpha1 = alpha / 5.0;
        self.alpha2 = alpha - self.alpha1;
        self
    }

    fn validate(&self, l: usize, pretest: bool) -> Result<()> {
        let level = |a: f64, name: &str| {
            if a > 0.0 && a < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in (0,1), got {a}")))
            }
        };
        level(self.alpha, "alpha")?;
        if self.u < 1 || self.u > l {
            return Err(Error::Config(format!(
                "U must lie in [1, {l}], got {}",
                self.u
            )));
        }
        if pretest {
            level(self.alpha1, "alpha1")?;
            level(self.alpha2, "alpha2")?;
            if (self.alpha1 + self.alpha2 - self.alpha).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "alpha1 + alpha2 must equal alpha ({} + {} != {})",
                    self.alpha1, self.alpha2, self.alpha
                )));
            }
            if l - self.u + 1 < 2 {
                return Err(Error::PretestInfeasible { u: self.u, l });
            }
        }
        if let Some(g) = &self.clr_grid {
            g.validate()?;
        }
        Ok(())
    }
}

/// Lexicographic `k`-subsets of `{0, .., l-1}`.
#[derive(Debug, Clone)]
pub struct Subsets {
    l: usize,
    current: Option<Vec<usize>>,
}

impl Iterator for Subsets {
    type Item = SubsetSpec;

    fn next(&mut self) -> Option<SubsetSpec> {
        let cur = self.current.as_mut()?;
        let out = SubsetSpec::new(cur.clone(), self.l).expect("enumerated subsets are valid");
        let k = cur.len();
        // Advance to the next combination.
        let mut i = k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if cur[i] < self.l - k + i {
                cur[i] += 1;
                for j in i + 1..k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

/// All `B` with `c(B) = k`, in lexicographic order.
pub fn enumerate_subsets(l: usize, k: usize) -> Result<Subsets> {
    if l == 0 || k > l - 1 {
        return Err(Error::Config(format!(
            "subset size must lie in [0, L-1] = [0, {}], got {k}",
            l.saturating_sub(1)
        )));
    }
    Ok(Subsets {
        l,
        current: Some((0..k).collect()),
    })
}

/// Diagnostics for one candidate set `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRecord {
    /// One-based indices of `B`.
    pub subset: Vec<usize>,
    /// Per-subset set; absent for CLR subsets screened out by the pretest.
    pub interval: Option<RealIntervalSet>,
    pub pretest_statistic: Option<f64>,
    pub pretest_p_value: Option<f64>,
    pub included: bool,
    /// The CLR grid boundary was accepted on at least one side.
    pub possibly_infinite: bool,
    pub first_stage_f: Option<f64>,
}

/// Robust confidence set with per-subset audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustCiReport {
    pub interval_set: RealIntervalSet,
    pub subsets: Vec<SubsetRecord>,
    pub u: usize,
    pub alpha: f64,
    pub alpha1: Option<f64>,
    pub alpha2: f64,
    pub test: TestKind,
    /// `Some("sargan")` when the union was pretested.
    pub pretest: Option<String>,
    pub warnings: Vec<String>,
}

impl RobustCiReport {
    /// Recomputes the union from the included subsets and compares.
    pub fn audit(&self) -> bool {
        let recomputed = self
            .subsets
            .iter()
            .filter(|r| r.included)
            .filter_map(|r| r.interval.as_ref())
            .fold(RealIntervalSet::empty(), |acc, s| acc.union(s));
        recomputed == self.interval_set
    }

    pub fn possibly_infinite(&self) -> bool {
        self.subsets
            .iter()
            .any(|r| r.included && r.possibly_infinite)
    }

    pub fn contains(&self, beta: f64) -> bool {
        self.interval_set.contains(beta)
    }
}

/// Per-call state shared by the subset workers.
struct UnionPlan<'a> {
    basis: &'a ProjectionBasis,
    config: &'a AnalysisConfig,
    pretest: bool,
    level: f64,
    ar_critical: Option<f64>,
    clr_table: Option<std::sync::Arc<ClrCriticalTable>>,
}

impl UnionPlan<'_> {
    fn subset_interval(&self, cache: &ProjectionCache) -> Result<(RealIntervalSet, bool)> {
        match self.config.test {
            TestKind::Ar => Ok((invert_ar_at(cache, self.ar_critical.unwrap()), false)),
            TestKind::Tsls => Ok((invert_wald(&tsls_fit(cache)?, self.level)?, false)),
            TestKind::Clr => {
                let grid = match self.config.clr_grid {
                    Some(g) => g,
                    None => default_clr_grid(cache, &self.config.clr)?,
                };
                let table = self.clr_table.as_ref().unwrap();
                let inv = invert_clr_with_table(cache, &grid, table, self.config.clr.refine_tol)?;
                let flag = inv.possibly_infinite();
                Ok((inv.set, flag))
            }
        }
    }

    fn record(&self, b: &SubsetSpec) -> Result<SubsetRecord> {
        let cache = self.basis.cache(b)?;
        let fit = tsls_fit(&cache).ok();
        let mut pretest: Option<TestResult> = None;
        let mut included = true;
        if self.pretest {
            let f = fit.ok_or_else(|| {
                Error::Identification(format!("TSLS undefined for B = {b}; cannot pretest"))
            })?;
            let s = sargan_statistic(&cache, &f, self.config.alpha1)?;
            included = s.statistic <= s.critical_value;
            pretest = Some(s);
        }
        let (interval, possibly_infinite) = if included || self.config.test != TestKind::Clr {
            let (set, flag) = self.subset_interval(&cache)?;
            (Some(set), flag)
        } else {
            (None, false)
        };
        Ok(SubsetRecord {
            subset: b.indices().iter().map(|j| j + 1).collect(),
            interval,
            pretest_statistic: pretest.as_ref().map(|t| t.statistic),
            pretest_p_value: pretest.as_ref().map(|t| t.p_value),
            included,
            possibly_infinite,
            first_stage_f: fit.map(|f| f.first_stage_f),
        })
    }
}

impl<'a> UnionPlan<'a> {
    /// Precomputes the critical values shared by every subset with
    /// `k = L - c(B)` free instruments.
    fn new(
        basis: &'a ProjectionBasis,
        config: &'a AnalysisConfig,
        pretest: bool,
        k: usize,
    ) -> Result<Self> {
        let level = if pretest { config.alpha2 } else { config.alpha };
        let ar_critical = match config.test {
            TestKind::Ar => Some(f_quantile(1.0 - level, k, basis.df_den())?),
            _ => None,
        };
        let clr_table = match config.test {
            TestKind::Clr => Some(ClrCriticalTable::shared(
                k,
                level,
                config.clr.draws,
                config.clr.seed,
            )?),
            _ => None,
        };
        Ok(UnionPlan {
            basis,
            config,
            pretest,
            level,
            ar_critical,
            clr_table,
        })
    }
}

/// Level-`(1 - alpha)` set for one fixed subset, without any pretest. With
/// `b = B*` this is the oracle analysis.
pub fn subset_ci(
    basis: &ProjectionBasis,
    b: &SubsetSpec,
    config: &AnalysisConfig,
) -> Result<SubsetRecord> {
    let l = basis.l();
    if b.size() >= l {
        return Err(Error::Config(format!(
            "subset {b} leaves no instrument to test with (L = {l})"
        )));
    }
    let mut single = config.clone();
    single.u = b.size() + 1;
    single.validate(l, false)?;
    UnionPlan::new(basis, &single, false, l - b.size())?.record(b)
}

fn run_union(
    basis: &ProjectionBasis,
    config: &AnalysisConfig,
    pretest: bool,
) -> Result<RobustCiReport> {
    let l = basis.l();
    config.validate(l, pretest)?;
    let plan = UnionPlan::new(basis, config, pretest, l - (config.u - 1))?;
    let level = plan.level;
    let subsets: Vec<SubsetSpec> = enumerate_subsets(l, config.u - 1)?.collect();
    let records: Vec<SubsetRecord> = subsets
        .par_iter()
        .map(|b| plan.record(b))
        .collect::<Result<_>>()?;

    let interval_set = records
        .iter()
        .filter(|r| r.included)
        .filter_map(|r| r.interval.as_ref())
        .fold(RealIntervalSet::empty(), |acc, s| acc.union(s));

    let mut warnings = Vec::new();
    if pretest && records.iter().all(|r| !r.included) {
        warnings.push(format!(
            "all pretests rejected: every B with c(B) = {} failed the Sargan test at level {}; \
             this is evidence against s < U",
            config.u - 1,
            config.alpha1
        ));
    }
    if records.iter().any(|r| r.included && r.possibly_infinite) {
        warnings.push(
            "CLR acceptance reached the grid boundary; unbounded sides follow the boundary rule"
                .into(),
        );
    }
    Ok(RobustCiReport {
        interval_set,
        subsets: records,
        u: config.u,
        alpha: config.alpha,
        alpha1: pretest.then_some(config.alpha1),
        alpha2: level,
        test: config.test,
        pretest: pretest.then(|| "sargan".to_string()),
        warnings,
    })
}

/// Union of level-`(1 - alpha)` sets over all `B` with `c(B) = U - 1`.
pub fn robust_ci(data: &IvDataset, config: &AnalysisConfig) -> Result<RobustCiReport> {
    robust_ci_with_basis(&ProjectionBasis::new(data)?, config)
}

pub fn robust_ci_with_basis(
    basis: &ProjectionBasis,
    config: &AnalysisConfig,
) -> Result<RobustCiReport> {
    run_union(basis, config, false)
}

/// Union of level-`(1 - alpha2)` sets over the subsets whose Sargan statistic
/// passes at level `alpha1`.
pub fn robust_ci_pretest(data: &IvDataset, config: &AnalysisConfig) -> Result<RobustCiReport> {
    robust_ci_pretest_with_basis(&ProjectionBasis::new(data)?, config)
}

pub fn robust_ci_pretest_with_basis(
    basis: &ProjectionBasis,
    config: &AnalysisConfig,
) -> Result<RobustCiReport> {
    run_union(basis, config, true)
}

/// Dispatches on `config.pretest`.
pub fn analyze_with_basis(
    basis: &ProjectionBasis,
    config: &AnalysisConfig,
) -> Result<RobustCiReport> {
    run_union(basis, config, config.pretest)
}

/// Result of sweeping `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub null_value: f64,
    pub reports: Vec<RobustCiReport>,
    /// Per report: does the set contain the null value?
    pub contains_null: Vec<bool>,
    /// Smallest swept `U` whose set contains the null value.
    pub first_u_containing_null: Option<usize>,
}

impl SensitivityReport {
    /// Human-readable conclusion.
    pub fn summary(&self, l: usize) -> String {
        match self.first_u_containing_null {
            Some(u) => format!("null value {} first included at U = {u}", self.null_value),
            None => {
                let max_u = self.reports.iter().map(|r| r.u).max().unwrap_or(0);
                if max_u == l {
                    format!("robust up to U = L = {l}")
                } else {
                    format!(
                        "null value {} excluded for every U up to {max_u}",
                        self.null_value
                    )
                }
            }
        }
    }
}

/// Runs [`robust_ci`] (or the pretested variant, per `config.pretest`) for
/// each `U` in `u_range` and records whether `null_value` is covered.
pub fn sensitivity_sweep(
    data: &IvDataset,
    config: &AnalysisConfig,
    u_range: &[usize],
    null_value: f64,
) -> Result<SensitivityReport> {
    let basis = ProjectionBasis::new(data)?;
    let mut reports = Vec::with_capacity(u_range.len());
    for &u in u_range {
        let cfg = AnalysisConfig {
            u,
            ..config.clone()
        };
        reports.push(analyze_with_basis(&basis, &cfg)?);
    }
    let contains_null: Vec<bool> = reports.iter().map(|r| r.contains(null_value)).collect();
    let first_u_containing_null = reports
        .iter()
        .zip(&contains_null)
        .filter(|(_, &c)| c)
        .map(|(r, _)| r.u)
        .min();
    Ok(SensitivityReport {
        null_value,
        reports,
        contains_null,
        first_u_containing_null,
    })
}
