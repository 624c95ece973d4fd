//! Experiment plans read from TOML, and their CSV / JSON outputs.
//!
//! A plan is a flat table: the design keys of [`SimConfig`] plus the plan
//! keys below. Every unknown key is reported at once.
//!
//! ```toml
//! name = "table1_strong_desk"
//! concentration_target = 100
//! reps = 1000
//! s_values = [0, 1, 2, 3, 4]
//! methods = ["naive-tsls", "ours-ar", "ours-sar-tsls", "oracle-ar"]
//! experiments = ["coverage", "length"]
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use super::experiments::{replicate_sets, CoverageRow, LengthRow, PowerRow};
use super::{Method, SimConfig};
use crate::error::{Error, Result};
use crate::inversion::GridSpec;
use crate::union::{AnalysisConfig, TestKind};

const DESIGN_KEYS: &[&str] = &[
    "n",
    "l",
    "L",
    "inst_corr",
    "s",
    "pi_magnitude",
    "beta_star",
    "sigma1",
    "sigma2",
    "rho",
    "concentration_target",
    "u",
    "U",
    "reps",
    "seed",
];

const PLAN_KEYS: &[&str] = &[
    "name",
    "experiments",
    "s_values",
    "methods",
    "alpha",
    "alpha1",
    "alpha2",
    "clr_draws",
    "clr_seed",
    "power_grid",
];

const GRID_KEYS: &[&str] = &["lo", "hi", "step"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Coverage,
    Length,
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct PlanKeys {
    name: String,
    experiments: Vec<ExperimentKind>,
    s_values: Option<Vec<usize>>,
    methods: Option<Vec<Method>>,
    alpha: f64,
    alpha1: Option<f64>,
    alpha2: Option<f64>,
    clr_draws: usize,
    clr_seed: u64,
    power_grid: Option<GridSpec>,
}

impl Default for PlanKeys {
    fn default() -> Self {
        Self {
            name: "simulation".into(),
            experiments: vec![ExperimentKind::Coverage, ExperimentKind::Length],
            s_values: None,
            methods: None,
            alpha: 0.05,
            alpha1: None,
            alpha2: None,
            clr_draws: crate::stats::DEFAULT_CLR_DRAWS,
            clr_seed: crate::inversion::ClrSettings::default().seed,
            power_grid: None,
        }
    }
}

/// A validated experiment plan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationPlan {
    pub name: String,
    pub design: SimConfig,
    pub experiments: Vec<ExperimentKind>,
    pub s_values: Vec<usize>,
    pub methods: Vec<Method>,
    pub analysis: AnalysisConfig,
    pub power_grid: Option<GridSpec>,
}

impl SimulationPlan {
    pub fn power_points(&self) -> Vec<f64> {
        self.power_grid
            .map(|g| g.points().collect())
            .unwrap_or_default()
    }
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Parses and validates a plan. Unknown keys anywhere in the file are
/// listed together in one error.
pub fn parse_plan(text: &str) -> Result<SimulationPlan> {
    let table: toml::Table = text.parse().map_err(config_error)?;
    reject_unknown(&table, &[DESIGN_KEYS, PLAN_KEYS])?;
    let design: SimConfig = subtable(&table, DESIGN_KEYS)
        .try_into()
        .map_err(config_error)?;
    let keys: PlanKeys = subtable(&table, PLAN_KEYS)
        .try_into()
        .map_err(config_error)?;
    design.validate()?;

    let s_values = keys.s_values.unwrap_or_else(|| vec![design.s]);
    if s_values.is_empty() {
        return Err(Error::Config("s_values must not be empty".into()));
    }
    for &s in &s_values {
        SimConfig {
            s,
            ..design.clone()
        }
        .validate()?;
    }
    let methods = keys.methods.unwrap_or_else(Method::table_rows);
    if methods.is_empty() {
        return Err(Error::Config("methods must not be empty".into()));
    }
    if keys.experiments.is_empty() {
        return Err(Error::Config("experiments must not be empty".into()));
    }
    let wants_power = keys.experiments.contains(&ExperimentKind::Power);
    match (&keys.power_grid, wants_power) {
        (None, true) => {
            return Err(Error::Config(
                "the power experiment needs a power_grid {lo, hi, step}".into(),
            ))
        }
        (Some(g), _) => g.validate()?,
        _ => {}
    }
    if design.reps < super::experiments::MIN_REPS {
        return Err(Error::Config(format!(
            "experiments need reps >= {}, got {}",
            super::experiments::MIN_REPS,
            design.reps
        )));
    }

    let mut analysis = AnalysisConfig::new(TestKind::Ar, design.u).with_alpha(keys.alpha);
    if let Some(a1) = keys.alpha1 {
        analysis.alpha1 = a1;
        analysis.alpha2 = keys.alpha2.unwrap_or(keys.alpha - a1);
    } else if let Some(a2) = keys.alpha2 {
        analysis.alpha2 = a2;
        analysis.alpha1 = keys.alpha - a2;
    }
    analysis.clr.draws = keys.clr_draws;
    analysis.clr.seed = keys.clr_seed;
    for m in &methods {
        if m.pretest {
            let u = if m.case == super::Case::Naive {
                1
            } else {
                design.u
            };
            let mut probe = analysis.clone();
            probe.u = u;
            probe.pretest = true;
            if !(probe.alpha1 > 0.0 && probe.alpha2 > 0.0)
                || (probe.alpha1 + probe.alpha2 - probe.alpha).abs() > 1e-12
            {
                return Err(Error::Config(format!(
                    "alpha1 + alpha2 must equal alpha ({} + {} != {})",
                    probe.alpha1, probe.alpha2, probe.alpha
                )));
            }
            if design.l < u + 1 {
                return Err(Error::PretestInfeasible { u, l: design.l });
            }
        }
    }
    Ok(SimulationPlan {
        name: keys.name,
        design,
        experiments: keys.experiments,
        s_values,
        methods,
        analysis,
        power_grid: keys.power_grid,
    })
}

/// Reads and parses a plan file.
pub fn load_plan(path: &Path) -> Result<SimulationPlan> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_plan(&text)
}

/// Everything a plan produced, as named file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub coverage: Vec<CoverageRow>,
    pub lengths: Vec<LengthRow>,
    pub power: Vec<PowerRow>,
    /// `(file name, contents)` in write order.
    pub files: Vec<(String, String)>,
}

impl SimulationOutput {
    pub fn write_to(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
        let mut written = Vec::new();
        for (name, body) in &self.files {
            let p = dir.join(name);
            std::fs::write(&p, body)
                .map_err(|e| Error::Config(format!("cannot write {}: {e}", p.display())))?;
            written.push(p);
        }
        Ok(written)
    }
}

/// `inf` / `-inf` / `nan` as strings, finite values as numbers.
pub fn ser_extended<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else {
        s.serialize_str(&ext(*x))
    }
}

fn ext(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else if x.is_nan() {
        "nan".into()
    } else {
        x.to_string()
    }
}

/// Methods as rows, `s` as columns.
fn wide_table(plan: &SimulationPlan, cell: impl Fn(&Method, usize) -> String) -> String {
    let mut out = String::from("method,case,test");
    for s in &plan.s_values {
        let _ = write!(out, ",s={s}");
    }
    out.push('\n');
    for m in &plan.methods {
        let _ = write!(out, "{m},{},{}", m.case.label(), m.test_label());
        for &s in &plan.s_values {
            let _ = write!(out, ",{}", cell(m, s));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct Summary<'a> {
    name: &'a str,
    seed: u64,
    reps: usize,
    rng: &'static str,
    design: &'a SimConfig,
    s_values: &'a [usize],
    methods: &'a [Method],
    alpha: f64,
    alpha1: f64,
    alpha2: f64,
    clr_draws: usize,
    clr_seed: u64,
    coverage: &'a [CoverageRow],
    lengths: &'a [LengthRow],
    power: &'a [PowerRow],
}

/// Runs every experiment of the plan for every `s`. Output is a pure
/// function of the plan.
pub fn run_plan(plan: &SimulationPlan) -> Result<SimulationOutput> {
    let grid = plan.power_points();
    let mut coverage = Vec::new();
    let mut lengths = Vec::new();
    let mut power = Vec::new();
    for &s in &plan.s_values {
        let cfg = SimConfig {
            s,
            ..plan.design.clone()
        };
        let sets = replicate_sets(&cfg, &plan.methods, &plan.analysis)?;
        for kind in &plan.experiments {
            match kind {
                ExperimentKind::Coverage => coverage.extend(sets.coverage()),
                ExperimentKind::Length => lengths.extend(sets.lengths()),
                ExperimentKind::Power => power.extend(sets.power(&grid)),
            }
        }
    }

    let mut files = Vec::new();
    if plan.experiments.contains(&ExperimentKind::Coverage) {
        let table = wide_table(plan, |m, s| {
            let r = coverage
                .iter()
                .find(|r| r.method == *m && r.s == s)
                .unwrap();
            // Percent, from integer counts so the value prints exactly.
            let hits = (r.coverage * r.reps as f64).round();
            (100.0 * hits / r.reps as f64).to_string()
        });
        files.push(("coverage.csv".to_string(), table));
    }
    if plan.experiments.contains(&ExperimentKind::Length) {
        let table = wide_table(plan, |m, s| {
            ext(lengths
                .iter()
                .find(|r| r.method == *m && r.s == s)
                .unwrap()
                .median_length)
        });
        files.push(("lengths.csv".to_string(), table));
    }
    if plan.experiments.contains(&ExperimentKind::Power) {
        let mut body = String::from("method,s,beta0,rejection,mc_se\n");
        for r in &power {
            let _ = writeln!(
                body,
                "{},{},{},{},{}",
                r.method, r.s, r.beta0, r.rejection, r.mc_se
            );
        }
        files.push(("power.csv".to_string(), body));
    }
    let summary = Summary {
        name: &plan.name,
        seed: plan.design.seed,
        reps: plan.design.reps,
        rng: "ChaCha8, one stream per (s, replicate)",
        design: &plan.design,
        s_values: &plan.s_values,
        methods: &plan.methods,
        alpha: plan.analysis.alpha,
        alpha1: plan.analysis.alpha1,
        alpha2: plan.analysis.alpha2,
        clr_draws: plan.analysis.clr.draws,
        clr_seed: plan.analysis.clr.seed,
        coverage: &coverage,
        lengths: &lengths,
        power: &power,
    };
    let mut json =
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    json.push('\n');
    files.push(("summary.json".to_string(), json));
    Ok(SimulationOutput {
        coverage,
        lengths,
        power,
        files,
    })
}

const POWER_KEYS: &[&str] = &["alpha", "subset", "power_grid", "mc_reps"];

/// Exact (and optionally Monte Carlo) AR power on one fixed design drawn
/// from `design`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerPlan {
    pub design: SimConfig,
    /// 1-based subset `B`; defaults to the true invalid set.
    pub subset: Vec<usize>,
    pub alpha: f64,
    pub power_grid: Option<GridSpec>,
    /// Monte Carlo replicates per grid point; 0 for the exact column only.
    pub mc_reps: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
struct PowerKeys {
    alpha: f64,
    subset: Option<Vec<usize>>,
    power_grid: Option<GridSpec>,
    mc_reps: usize,
}

impl Default for PowerKeys {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            subset: None,
            power_grid: None,
            mc_reps: 0,
        }
    }
}

fn reject_unknown(table: &toml::Table, allowed: &[&[&str]]) -> Result<()> {
    let known = |k: &str| allowed.iter().any(|set| set.contains(&k));
    let mut unknown: Vec<String> = table.keys().filter(|k| !known(k)).cloned().collect();
    if let Some(toml::Value::Table(g)) = table.get("power_grid") {
        unknown.extend(
            g.keys()
                .filter(|k| !GRID_KEYS.contains(&k.as_str()))
                .map(|k| format!("power_grid.{k}")),
        );
    }
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "unknown configuration keys: {}",
            unknown.join(", ")
        )))
    }
}

fn subtable(table: &toml::Table, keys: &[&str]) -> toml::Table {
    table
        .iter()
        .filter(|(k, _)| keys.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

pub fn parse_power_plan(text: &str) -> Result<PowerPlan> {
    let table: toml::Table = text.parse().map_err(config_error)?;
    reject_unknown(&table, &[DESIGN_KEYS, POWER_KEYS])?;
    let design: SimConfig = subtable(&table, DESIGN_KEYS)
        .try_into()
        .map_err(config_error)?;
    let keys: PowerKeys = subtable(&table, POWER_KEYS)
        .try_into()
        .map_err(config_error)?;
    design.validate()?;
    let subset = keys.subset.unwrap_or_else(|| (1..=design.s).collect());
    if subset.iter().any(|&j| j == 0 || j > design.l) {
        return Err(Error::Config(format!(
            "subset entries must lie in 1..={}, got {subset:?}",
            design.l
        )));
    }
    if let Some(g) = &keys.power_grid {
        g.validate()?;
    }
    Ok(PowerPlan {
        design,
        subset,
        alpha: keys.alpha,
        power_grid: keys.power_grid,
        mc_reps: keys.mc_reps,
    })
}

pub fn load_power_plan(path: &Path) -> Result<PowerPlan> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_power_plan(&text)
}

impl PowerPlan {
    /// Draws the fixed design (instruments and direct effects) from
    /// `design.seed` and assembles the power template.
    pub fn spec(&self) -> Result<crate::power::PowerSpec> {
        let cfg = &self.design;
        let gamma = super::calibrate_gamma(cfg)?;
        let mut rng = super::replicate_rng(cfg.seed, cfg.s, 0);
        let pi = super::draw_pi(cfg, &mut rng);
        let z = super::draw_instruments(cfg, &mut rng)?;
        let subset =
            crate::model::SubsetSpec::new(self.subset.iter().map(|j| j - 1).collect(), cfg.l)?;
        Ok(crate::power::PowerSpec {
            beta_star: cfg.beta_star,
            beta0: cfg.beta_star,
            pi,
            gamma,
            subset,
            design: z,
            alpha: self.alpha,
            sigma1: cfg.sigma1,
            sigma2: cfg.sigma2,
            rho: cfg.rho,
        })
    }
}

/// Power curve over `grid`; adds a Monte Carlo column when `mc_reps > 0`.
pub fn run_power_plan(plan: &PowerPlan, grid: &GridSpec) -> Result<Vec<crate::power::PowerPoint>> {
    grid.validate()?;
    let spec = plan.spec()?;
    let points: Vec<f64> = grid.points().collect();
    let mut curve = crate::power::power_curve(&spec, &points)?;
    if plan.mc_reps > 0 {
        let mc_seed = plan.design.seed.wrapping_add(1);
        for p in &mut curve {
            let at = crate::power::PowerSpec {
                beta0: p.beta0,
                ..spec.clone()
            };
            p.power_mc =
                Some(super::experiments::mc_power_fixed_design(&at, plan.mc_reps, mc_seed)?.0);
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
        name = "small"
        n = 200
        L = 4
        U = 2
        reps = 200
        concentration_target = 30
        s_values = [0, 1]
        methods = ["naive-ar", "ours-ar", "oracle-ar"]
        experiments = ["coverage", "length", "power"]
        power_grid = { lo = 1.0, hi = 3.0, step = 0.5 }
    "#;

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = parse_plan(
            "n = 100\nrepz = 3\nfoo = 1\npower_grid = { lo = 0, hi = 1, step = 0.1, bar = 2 }",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("repz") && msg.contains("foo") && msg.contains("power_grid.bar"),
            "{msg}"
        );
    }

    #[test]
    fn zero_reps_is_a_config_error() {
        assert!(matches!(parse_plan("reps = 0"), Err(Error::Config(_))));
    }

    #[test]
    fn aliases_and_defaults() {
        let plan = parse_plan(SMALL).unwrap();
        assert_eq!((plan.design.l, plan.design.u), (4, 2));
        assert_eq!(plan.s_values, vec![0, 1]);
        assert_eq!(plan.analysis.alpha1 + plan.analysis.alpha2, 0.05);
        assert_eq!(plan.power_points().len(), 5);
    }

    #[test]
    fn power_plan_defaults_to_true_invalid_set() {
        let plan = parse_power_plan("n = 300\nL = 5\ns = 2\nmc_reps = 0").unwrap();
        assert_eq!(plan.subset, vec![1, 2]);
        assert!(parse_power_plan("subset = [0]").is_err());
        assert!(parse_power_plan("reps_mc = 3")
            .unwrap_err()
            .to_string()
            .contains("reps_mc"));
        let grid = GridSpec::new(1.0, 3.0, 0.5).unwrap();
        let curve = run_power_plan(&plan, &grid).unwrap();
        let at_truth = curve.iter().find(|p| p.beta0 == 2.0).unwrap();
        assert!((at_truth.power_exact - 0.05).abs() < 1e-8);
    }

    #[test]
    fn power_needs_a_grid() {
        assert!(parse_plan("experiments = [\"power\"]").is_err());
    }

    #[test]
    fn output_shape_and_determinism() {
        let plan = parse_plan(SMALL).unwrap();
        let a = run_plan(&plan).unwrap();
        let b = run_plan(&plan).unwrap();
        assert_eq!(a.files, b.files);
        let names: Vec<&str> = a.files.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            names,
            ["coverage.csv", "lengths.csv", "power.csv", "summary.json"]
        );
        let cov = &a.files[0].1;
        assert_eq!(cov.lines().next().unwrap(), "method,case,test,s=0,s=1");
        assert_eq!(cov.lines().count(), 4);
        assert_eq!(a.power.len(), 3 * 2 * 5);
        let json: serde_json::Value = serde_json::from_str(&a.files[3].1).unwrap();
        assert_eq!(json["seed"], plan.design.seed);
    }
}
