//! Simulation design with possibly invalid instruments, and the experiment
//! drivers built on it.
//!
//! Instruments are equicorrelated Gaussians; the first `s` of them are
//! invalid (`pi_j != 0`). The first-stage coefficients are a common value `c`
//! chosen so that the expected first-stage F of the valid instruments, after
//! partialling out the invalid ones, hits `concentration_target`.

pub mod experiments;
pub mod report;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{IvDataset, SubsetSpec};
use crate::union::TestKind;

pub use experiments::{
    coverage_experiment, length_experiment, mc_power_fixed_design, power_experiment,
    replicate_sets, CoverageRow, LengthRow, PowerRow, ReplicateSets,
};
pub use report::{
    load_plan, load_power_plan, parse_plan, parse_power_plan, run_plan, run_power_plan,
    ExperimentKind, PowerPlan, SimulationOutput, SimulationPlan,
};

/// One data-generating design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n: usize,
    #[serde(alias = "L")]
    pub l: usize,
    pub inst_corr: f64,
    /// Number of invalid instruments; they are the first `s`.
    pub s: usize,
    /// Uniform range of the nonzero direct effects.
    pub pi_magnitude: [f64; 2],
    pub beta_star: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
    /// Expected first-stage F of the valid instruments.
    pub concentration_target: f64,
    #[serde(alias = "U")]
    pub u: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 5000,
            l: 10,
            inst_corr: 0.6,
            s: 0,
            pi_magnitude: [0.4, 1.0],
            beta_star: 2.0,
            sigma1: 1.0,
            sigma2: 1.0,
            rho: 0.8,
            concentration_target: 100.0,
            u: 5,
            reps: 1000,
            seed: 20160501,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.l == 0 {
            return bad("L must be at least 1".into());
        }
        if self.n <= self.l + 1 {
            return bad(format!("n = {} is too small for L = {}", self.n, self.l));
        }
        if self.s > self.l {
            return bad(format!("s = {} exceeds L = {}", self.s, self.l));
        }
        if self.u < 1 || self.u > self.l {
            return bad(format!("U must lie in [1, {}], got {}", self.l, self.u));
        }
        if !(self.rho.abs() < 1.0) {
            return bad(format!("|rho| must be < 1, got {}", self.rho));
        }
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0) {
            return bad("sigma1 and sigma2 must be positive".into());
        }
        let lower = if self.l > 1 {
            -1.0 / (self.l as f64 - 1.0)
        } else {
            -1.0
        };
        if !(self.inst_corr > lower && self.inst_corr < 1.0) {
            return bad(format!(
                "inst_corr = {} does not give a positive definite instrument covariance",
                self.inst_corr
            ));
        }
        let [a, b] = self.pi_magnitude;
        if !(a.is_finite() && b.is_finite() && a <= b) {
            return bad(format!(
                "pi_magnitude must be an ordered finite pair, got [{a}, {b}]"
            ));
        }
        if !self.beta_star.is_finite() {
            return bad("beta_star must be finite".into());
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        Ok(())
    }

    /// Equicorrelated instrument covariance.
    pub fn instrument_covariance(&self) -> DMatrix<f64> {
        DMatrix::from_fn(
            self.l,
            self.l,
            |i, j| if i == j { 1.0 } else { self.inst_corr },
        )
    }

    /// The true invalid set: the first `s` instruments.
    pub fn invalid_set(&self) -> Result<SubsetSpec> {
        SubsetSpec::new((0..self.s).collect(), self.l)
    }
}

/// First-stage coefficients `gamma = c * 1` with `c` matched to the target
/// concentration `mu^2 = k (E[F] - 1)`, `k = L - s`. Here
/// `mu^2 = c^2 (n - s) 1' S 1 / sigma1^2` and `S` is the covariance of the
/// valid instruments conditional on the invalid ones.
pub fn calibrate_gamma(config: &SimConfig) -> Result<DVector<f64>> {
    config.validate()?;
    if !(config.concentration_target >= 1.0) {
        return Err(Error::Config(format!(
            "concentration target must be >= 1 (E[F] >= 1), got {}",
            config.concentration_target
        )));
    }
    let (l, s) = (config.l, config.s);
    let k = l - s;
    if k == 0 {
        return Err(Error::Config(
            "no valid instrument to calibrate against (s = L)".into(),
        ));
    }
    let sigma = config.instrument_covariance();
    let cc = sigma.view((s, s), (k, k)).into_owned();
    let cond = if s == 0 {
        cc
    } else {
        let bb = sigma.view((0, 0), (s, s)).into_owned();
        let cb = sigma.view((s, 0), (k, s)).into_owned();
        let bb_inv = bb
            .cholesky()
            .ok_or_else(|| Error::Config("instrument covariance is not positive definite".into()))?
            .inverse();
        &cc - &cb * bb_inv * cb.transpose()
    };
    let spread = cond.sum();
    let mu2 = k as f64 * (config.concentration_target - 1.0);
    let c = (mu2 * config.sigma1 * config.sigma1 / ((config.n - s) as f64 * spread)).sqrt();
    Ok(DVector::from_element(l, c))
}

/// What generated a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub beta_star: f64,
    pub pi: Vec<f64>,
    pub gamma: Vec<f64>,
    /// 0-based indices of the invalid instruments.
    pub invalid: Vec<usize>,
}

/// Generator for replicate `rep` of the design with `s` invalid instruments:
/// seed `seed`, stream keyed by `(s, rep)`, so a replicate's draws do not
/// depend on how many replicates are run.
pub fn replicate_rng(seed: u64, s: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((s as u64) << 40) | rep as u64);
    rng
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Direct effects: `U(pi_magnitude)` on the first `s` entries, zero elsewhere.
pub fn draw_pi(config: &SimConfig, rng: &mut impl Rng) -> DVector<f64> {
    let [a, b] = config.pi_magnitude;
    DVector::from_fn(config.l, |j, _| {
        if j < config.s {
            if a == b {
                a
            } else {
                rng.random_range(a..b)
            }
        } else {
            0.0
        }
    })
}

/// `n x L` matrix with i.i.d. rows `N(0, Sigma)`.
pub fn draw_instruments(config: &SimConfig, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    let chol = config
        .instrument_covariance()
        .cholesky()
        .ok_or_else(|| Error::Config("instrument covariance is not positive definite".into()))?;
    let e = DMatrix::from_fn(config.n, config.l, |_, _| normal(rng));
    Ok(e * chol.l().transpose())
}

/// `(y, d)` on a given design, with fresh error draws.
pub fn draw_responses(
    config: &SimConfig,
    z: &DMatrix<f64>,
    pi: &DVector<f64>,
    gamma: &DVector<f64>,
    rng: &mut impl Rng,
) -> (DVector<f64>, DVector<f64>) {
    let n = z.nrows();
    let tail = (1.0 - config.rho * config.rho).sqrt();
    let mut xi = DVector::zeros(n);
    let mut eps = DVector::zeros(n);
    for i in 0..n {
        let (u1, u2) = (normal(rng), normal(rng));
        xi[i] = config.sigma1 * u1;
        eps[i] = config.sigma2 * (config.rho * u1 + tail * u2);
    }
    let d = z * gamma + xi;
    let y = z * pi + &d * config.beta_star + eps;
    (y, d)
}

/// Draws one dataset from `rng`.
pub fn generate_with_rng(
    config: &SimConfig,
    gamma: &DVector<f64>,
    rng: &mut impl Rng,
) -> Result<(IvDataset, TruthRecord)> {
    config.validate()?;
    if gamma.len() != config.l {
        return Err(Error::Dimension(format!(
            "gamma has {} entries, L = {}",
            gamma.len(),
            config.l
        )));
    }
    let pi = draw_pi(config, rng);
    let z = draw_instruments(config, rng)?;
    let (y, d) = draw_responses(config, &z, &pi, gamma, rng);
    let truth = TruthRecord {
        beta_star: config.beta_star,
        pi: pi.iter().copied().collect(),
        gamma: gamma.iter().copied().collect(),
        invalid: (0..config.s).collect(),
    };
    Ok((IvDataset::new(y, d, z, None)?, truth))
}

/// Draws one dataset; identical seeds give bit-identical data.
pub fn generate_dataset(
    config: &SimConfig,
    gamma: &DVector<f64>,
    seed: u64,
) -> Result<(IvDataset, TruthRecord)> {
    generate_with_rng(config, gamma, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Which union the method takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    /// All instruments assumed valid (`U = 1`).
    Naive,
    /// Union over `c(B) = U - 1`.
    Ours,
    /// Knows the true invalid set.
    Oracle,
}

impl Case {
    pub fn label(self) -> &'static str {
        match self {
            Case::Naive => "naive",
            Case::Ours => "ours",
            Case::Oracle => "oracle",
        }
    }
}

/// A confidence-set procedure compared in the experiments, named like
/// `naive-tsls`, `ours-ar` or `ours-sar-tsls`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Method {
    pub case: Case,
    pub test: TestKind,
    pub pretest: bool,
}

impl Method {
    pub const fn new(case: Case, test: TestKind, pretest: bool) -> Self {
        Self {
            case,
            test,
            pretest,
        }
    }

    /// Rows of the coverage table, in display order.
    pub fn table_rows() -> Vec<Method> {
        use Case::*;
        use TestKind::*;
        let mut v = Vec::new();
        for t in [Tsls, Ar, Clr] {
            v.push(Method::new(Naive, t, false));
        }
        for t in [Tsls, Ar, Clr] {
            v.push(Method::new(Ours, t, false));
        }
        v.push(Method::new(Ours, Tsls, true));
        v.push(Method::new(Ours, Clr, true));
        for t in [Tsls, Ar, Clr] {
            v.push(Method::new(Oracle, t, false));
        }
        v
    }

    /// Table label, e.g. `SAR + TSLS`.
    pub fn test_label(&self) -> String {
        if self.pretest {
            format!("SAR + {}", self.test.label())
        } else {
            self.test.label().to_string()
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let test = self.test.label().to_ascii_lowercase();
        if self.pretest {
            write!(f, "{}-sar-{test}", self.case.label())
        } else {
            write!(f, "{}-{test}", self.case.label())
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "unknown method {s:?} (expected e.g. naive-ar, ours-tsls, ours-sar-clr, oracle-ar)"
            ))
        };
        let parts: Vec<&str> = s.split('-').collect();
        let (case, pretest, test) = match parts.as_slice() {
            [c, t] => (*c, false, *t),
            [c, "sar", t] => (*c, true, *t),
            _ => return Err(bad()),
        };
        let case = match case {
            "naive" => Case::Naive,
            "ours" => Case::Ours,
            "oracle" => Case::Oracle,
            _ => return Err(bad()),
        };
        if pretest && case == Case::Oracle {
            return Err(Error::Config(format!(
                "{s:?}: the oracle analysis has no pretest"
            )));
        }
        Ok(Method::new(case, test.parse().map_err(|_| bad())?, pretest))
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
