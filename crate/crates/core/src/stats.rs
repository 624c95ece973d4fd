//! Test statistics for `H0: beta = beta0` treating the instruments in `B` as
//! exogenous controls and those in `B^c` as instruments: Anderson-Rubin, the
//! TSLS Wald test, Moreira's conditional likelihood ratio, and the Sargan
//! overidentification test. Everything is evaluated from a
//! [`ProjectionCache`], so one factorization serves all `beta0` values.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::distributions::{chi_square_quantile, chi_square_sf, f_quantile, f_sf, normal_quantile};
use crate::error::{Error, Result};
use crate::model::ProjectionCache;

/// Default number of Monte Carlo draws for CLR conditional critical values.
pub const DEFAULT_CLR_DRAWS: usize = 10_000;
/// Fewer draws than this give critical values too noisy to be useful.
pub const MIN_CLR_DRAWS: usize = 1_000;

/// Outcome of one test at one `beta0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    /// `(df1, df2)` of the reference law; `df2 = 0` for chi-square references.
    pub df: (usize, usize),
    /// CLR only: the conditioning statistic `Q_T`.
    pub conditioning: Option<f64>,
    /// CLR only: Monte Carlo draws behind the p-value (None when exact).
    pub mc_draws: Option<usize>,
}

impl TestResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "alpha must lie in (0,1), got {alpha}"
        )))
    }
}

/// Anderson-Rubin partial F statistic
/// `[num(b0)/(L - c(B))] / [den(b0)/(n - L)]`, without reference quantities.
pub fn ar_value(beta0: f64, cache: &ProjectionCache) -> Result<f64> {
    let den = cache.residual.at(beta0);
    if !(den > 0.0) {
        return Err(Error::DegenerateFit(format!(
            "residual sum of squares vanishes at beta0 = {beta0}"
        )));
    }
    let num = cache.middle.at(beta0);
    Ok((num / cache.df_num as f64) / (den / cache.df_den as f64))
}

/// [`ar_value`] with its `F(L - c(B), n - L)` critical value and p-value.
pub fn ar_statistic(beta0: f64, cache: &ProjectionCache, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let stat = ar_value(beta0, cache)?;
    Ok(TestResult {
        statistic: stat,
        critical_value: f_quantile(1.0 - alpha, cache.df_num, cache.df_den)?,
        p_value: f_sf(stat, cache.df_num, cache.df_den)?,
        df: (cache.df_num, cache.df_den),
        conditioning: None,
        mc_draws: None,
    })
}

/// Two-stage least squares fit for one subset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TslsFit {
    pub beta_hat: f64,
    pub std_err: f64,
    pub residual_variance: f64,
    /// Partial F of `Z_{B^c}` in the regression of `d` on `Z`.
    pub first_stage_f: f64,
    pub df_num: usize,
}

/// TSLS of `y` on `d` with instruments `Z_{B^c}` and controls `Z_B`.
///
/// Residual variance uses the denominator `n - p - c(B) - 1` (controls plus
/// the exposure); standard errors are homoskedastic.
pub fn tsls_fit(cache: &ProjectionCache) -> Result<TslsFit> {
    let mid = cache.middle;
    let controls = cache.controls_residual();
    if !(mid.dd > 1e-12 * controls.dd) || mid.dd <= 0.0 {
        return Err(Error::Identification(
            "fitted exposure has no variation outside the controls".into(),
        ));
    }
    let beta_hat = mid.yd / mid.dd;
    let resid_df = cache
        .n
        .checked_sub(cache.absorbed + cache.subset_size + 1)
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::Dimension("no residual degrees of freedom for TSLS".into()))?;
    let residual_variance = controls.at(beta_hat) / resid_df as f64;
    if !(residual_variance > 0.0) {
        return Err(Error::DegenerateFit("TSLS residuals vanish".into()));
    }
    let first_stage_f = if cache.residual.dd > 0.0 {
        (mid.dd / cache.df_num as f64) / (cache.residual.dd / cache.df_den as f64)
    } else {
        f64::INFINITY
    };
    Ok(TslsFit {
        beta_hat,
        std_err: (residual_variance / mid.dd).sqrt(),
        residual_variance,
        first_stage_f,
        df_num: cache.df_num,
    })
}

/// Squared t-ratio against the chi-square(1) reference.
pub fn wald_statistic(beta0: f64, fit: &TslsFit, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let t = (fit.beta_hat - beta0) / fit.std_err;
    let stat = t * t;
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    Ok(TestResult {
        statistic: stat,
        critical_value: z * z,
        p_value: chi_square_sf(stat, 1)?,
        df: (1, 0),
        conditioning: None,
        mc_draws: None,
    })
}

/// Sargan statistic `n * e'P e / e'e` on the TSLS residuals, chi-square with
/// `c(B^c) - 1` degrees of freedom.
pub fn sargan_statistic(cache: &ProjectionCache, fit: &TslsFit, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let k = cache.df_num;
    if k < 2 {
        return Err(Error::JustIdentified(k));
    }
    let explained = cache.middle.at(fit.beta_hat);
    let total = cache.controls_residual().at(fit.beta_hat);
    if !(total > 0.0) {
        return Err(Error::DegenerateFit("TSLS residuals vanish".into()));
    }
    let stat = cache.n as f64 * explained / total;
    Ok(TestResult {
        statistic: stat,
        critical_value: chi_square_quantile(1.0 - alpha, k - 1)?,
        p_value: chi_square_sf(stat, k - 1)?,
        df: (k - 1, 0),
        conditioning: None,
        mc_draws: None,
    })
}

/// The orthogonalized statistics behind the CLR test at one `beta0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClrComponents {
    pub qs: f64,
    pub qt: f64,
    pub qst: f64,
    pub lr: f64,
    pub k: usize,
}

/// `Q_S`, `Q_T`, `Q_ST` and the LR statistic, with the reduced-form error
/// covariance estimated from the residuals off all instruments.
pub fn clr_components(beta0: f64, cache: &ProjectionCache) -> Result<ClrComponents> {
    let df = cache.df_den as f64;
    let (oyy, oyd, odd) = (
        cache.residual.yy / df,
        cache.residual.yd / df,
        cache.residual.dd / df,
    );
    let det = oyy * odd - oyd * oyd;
    if !(det > 0.0) {
        return Err(Error::DegenerateFit(
            "reduced-form error covariance is singular".into(),
        ));
    }
    let m = cache.middle;
    let quad = |a: (f64, f64), b: (f64, f64)| {
        a.0 * b.0 * m.yy + (a.0 * b.1 + a.1 * b.0) * m.yd + a.1 * b.1 * m.dd
    };
    // b0 = (1, -beta0), a0 = (beta0, 1).
    let b0 = (1.0, -beta0);
    let sigma_b = oyy - 2.0 * beta0 * oyd + beta0 * beta0 * odd;
    // omega^{-1} a0
    let w = ((odd * beta0 - oyd) / det, (-oyd * beta0 + oyy) / det);
    let tau = beta0 * w.0 + w.1;
    let qs = quad(b0, b0) / sigma_b;
    let qt = quad(w, w) / tau;
    let qst = quad(b0, w) / (sigma_b * tau).sqrt();
    Ok(ClrComponents {
        qs,
        qt,
        qst,
        lr: likelihood_ratio(qs, qt, qst),
        k: cache.df_num,
    })
}

fn likelihood_ratio(qs: f64, qt: f64, qst: f64) -> f64 {
    let disc = ((qs + qt).powi(2) - 4.0 * (qs * qt - qst * qst)).max(0.0);
    (0.5 * (qs - qt + disc.sqrt())).max(0.0)
}

/// LR under the null given `Q_T = qt`, from `Q_1 ~ chi2(1)` and
/// `Q_{k-1} ~ chi2(k-1)`.
fn conditional_lr(q1: f64, qk: f64, qt: f64) -> f64 {
    let disc = ((q1 + qk + qt).powi(2) - 4.0 * qt * qk).max(0.0);
    0.5 * (q1 + qk - qt + disc.sqrt())
}

/// Seeded chi-square pairs driving the conditional null distribution.
#[derive(Debug, Clone)]
struct ClrDraws {
    q1: Vec<f64>,
    qk: Vec<f64>,
}

impl ClrDraws {
    fn new(k: usize, draws: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q1 = Vec::with_capacity(draws);
        let mut qk = Vec::with_capacity(draws);
        for _ in 0..draws {
            let z: f64 = StandardNormal.sample(&mut rng);
            q1.push(z * z);
            let mut s = 0.0;
            for _ in 1..k {
                let z: f64 = StandardNormal.sample(&mut rng);
                s += z * z;
            }
            qk.push(s);
        }
        Self { q1, qk }
    }

    fn simulate(&self, qt: f64) -> Vec<f64> {
        self.q1
            .iter()
            .zip(&self.qk)
            .map(|(&a, &b)| conditional_lr(a, b, qt))
            .collect()
    }

    fn exceedance(&self, lr: f64, qt: f64) -> f64 {
        let hits = self
            .q1
            .iter()
            .zip(&self.qk)
            .filter(|(&a, &b)| conditional_lr(a, b, qt) >= lr)
            .count();
        hits as f64 / self.q1.len() as f64
    }
}

/// Index of the order statistic `c` with `LR <= c  <=>  p_value >= alpha`.
fn critical_index(draws: usize, alpha: f64) -> usize {
    let m = ((alpha * draws as f64).ceil() as usize).clamp(1, draws);
    draws - m
}

fn check_draws(draws: usize) -> Result<()> {
    if draws < MIN_CLR_DRAWS {
        return Err(Error::Config(format!(
            "CLR needs at least {MIN_CLR_DRAWS} Monte Carlo draws, got {draws}"
        )));
    }
    Ok(())
}

/// CLR test at `beta0`. For `k = c(B^c) >= 2` the conditional p-value is a
/// Monte Carlo exceedance frequency over `mc_draws` seeded draws; with a
/// single instrument the conditional law is exactly chi-square(1).
pub fn clr_statistic(
    beta0: f64,
    cache: &ProjectionCache,
    alpha: f64,
    mc_draws: usize,
    seed: u64,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    check_draws(mc_draws)?;
    let c = clr_components(beta0, cache)?;
    if c.k == 1 {
        return Ok(TestResult {
            statistic: c.lr,
            critical_value: chi_square_quantile(1.0 - alpha, 1)?,
            p_value: chi_square_sf(c.lr, 1)?,
            df: (1, 0),
            conditioning: Some(c.qt),
            mc_draws: None,
        });
    }
    let draws = ClrDraws::new(c.k, mc_draws, seed);
    let mut sim = draws.simulate(c.qt);
    sim.sort_by(f64::total_cmp);
    Ok(TestResult {
        statistic: c.lr,
        critical_value: sim[critical_index(mc_draws, alpha)],
        p_value: draws.exceedance(c.lr, c.qt),
        df: (c.k, 0),
        conditioning: Some(c.qt),
        mc_draws: Some(mc_draws),
    })
}

/// Conditional critical values `c_alpha(q_T)` tabulated on a log grid of the
/// conditioning statistic, all from one seeded set of draws. Used to invert
/// CLR over thousands of `beta0` values at O(1) cost each.
#[derive(Debug, Clone)]
pub struct ClrCriticalTable {
    k: usize,
    log_qt: Vec<f64>,
    crit: Vec<f64>,
    at_zero: f64,
}

const TABLE_QT_MIN: f64 = 1e-3;
const TABLE_QT_MAX: f64 = 1e7;
const TABLE_POINTS_PER_DECADE: usize = 40;

type TableKey = (usize, u64, usize, u64);

fn table_cache() -> &'static Mutex<HashMap<TableKey, Arc<ClrCriticalTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<TableKey, Arc<ClrCriticalTable>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl ClrCriticalTable {
    pub fn new(k: usize, alpha: f64, draws: usize, seed: u64) -> Result<Self> {
        check_alpha(alpha)?;
        check_draws(draws)?;
        if k == 0 {
            return Err(Error::Config("CLR needs at least one instrument".into()));
        }
        if k == 1 {
            let c = chi_square_quantile(1.0 - alpha, 1)?;
            return Ok(Self {
                k,
                log_qt: vec![TABLE_QT_MIN.ln(), TABLE_QT_MAX.ln()],
                crit: vec![c, c],
                at_zero: c,
            });
        }
        let sampler = ClrDraws::new(k, draws, seed);
        let idx = critical_index(draws, alpha);
        let crit_at = |qt: f64| {
            let mut sim = sampler.simulate(qt);
            sim.select_nth_unstable_by(idx, f64::total_cmp);
            sim[idx]
        };
        let decades = (TABLE_QT_MAX / TABLE_QT_MIN).log10();
        let points = (decades * TABLE_POINTS_PER_DECADE as f64).round() as usize + 1;
        let (lo, hi) = (TABLE_QT_MIN.ln(), TABLE_QT_MAX.ln());
        let log_qt: Vec<f64> = (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect();
        let crit = log_qt.iter().map(|&l| crit_at(l.exp())).collect();
        Ok(Self {
            k,
            log_qt,
            crit,
            at_zero: crit_at(0.0),
        })
    }

    /// Process-wide memoized table for `(k, alpha, draws, seed)`.
    pub fn shared(k: usize, alpha: f64, draws: usize, seed: u64) -> Result<Arc<Self>> {
        let key = (k, alpha.to_bits(), draws, seed);
        if let Some(t) = table_cache().lock().unwrap().get(&key) {
            return Ok(Arc::clone(t));
        }
        let table = Arc::new(Self::new(k, alpha, draws, seed)?);
        table_cache()
            .lock()
            .unwrap()
            .entry(key)
            .or_insert_with(|| Arc::clone(&table));
        Ok(table)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Interpolated critical value at conditioning statistic `qt`.
    pub fn critical_value(&self, qt: f64) -> f64 {
        let qt = qt.max(0.0);
        let first = self.crit[0];
        if qt < TABLE_QT_MIN {
            return self.at_zero + (first - self.at_zero) * qt / TABLE_QT_MIN;
        }
        let l = qt.ln();
        let last = self.log_qt.len() - 1;
        if l >= self.log_qt[last] {
            return self.crit[last];
        }
        let step = (self.log_qt[last] - self.log_qt[0]) / last as f64;
        let pos = (l - self.log_qt[0]) / step;
        let i = (pos.floor() as usize).min(last - 1);
        let frac = pos - i as f64;
        self.crit[i] + (self.crit[i + 1] - self.crit[i]) * frac
    }

    /// Acceptance of `H0: beta = beta0` using the tabulated critical value.
    pub fn accepts(&self, beta0: f64, cache: &ProjectionCache) -> Result<bool> {
        let c = clr_components(beta0, cache)?;
        Ok(c.lr <= self.critical_value(c.qt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_projection_cache, IvDataset, QuadForms, SubsetSpec};
    use nalgebra::{DMatrix, DVector};

    fn cache_with(middle: QuadForms, residual: QuadForms, df_num: usize) -> ProjectionCache {
        ProjectionCache {
            middle,
            residual,
            df_num,
            df_den: 100,
            subset_size: 0,
            n: 100 + df_num,
            absorbed: 0,
        }
    }

    #[test]
    fn ar_vanishes_on_orthogonal_residual() {
        // y - d*b0 with zero projection on the instruments.
        let cache = cache_with(
            QuadForms {
                yy: 4.0,
                yd: 2.0,
                dd: 1.0,
            },
            QuadForms {
                yy: 10.0,
                yd: 1.0,
                dd: 5.0,
            },
            3,
        );
        let r = ar_statistic(2.0, &cache, 0.05).unwrap();
        assert!(r.statistic.abs() < 1e-14);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ar_degenerate_denominator() {
        let cache = cache_with(
            QuadForms {
                yy: 4.0,
                yd: 2.0,
                dd: 1.0,
            },
            QuadForms {
                yy: 4.0,
                yd: 2.0,
                dd: 1.0,
            },
            3,
        );
        assert!(matches!(
            ar_statistic(2.0, &cache, 0.05),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn wald_is_centered_and_calibrated() {
        let fit = TslsFit {
            beta_hat: 2.0,
            std_err: 0.1,
            residual_variance: 1.0,
            first_stage_f: 50.0,
            df_num: 3,
        };
        let at_hat = wald_statistic(2.0, &fit, 0.05).unwrap();
        assert_eq!(at_hat.statistic, 0.0);
        assert!((at_hat.p_value - 1.0).abs() < 1e-15);
        let edge = wald_statistic(2.0 + 1.959_964 * 0.1, &fit, 0.05).unwrap();
        assert!((edge.p_value - 0.05).abs() < 1e-6);
        // (2.0 - 1.7) / 0.1 = 3, squared.
        let r = wald_statistic(1.7, &fit, 0.05).unwrap();
        assert!((r.statistic - 9.0).abs() < 1e-12);
    }

    #[test]
    fn sargan_requires_overidentification() {
        let cache = cache_with(
            QuadForms {
                yy: 4.0,
                yd: 2.0,
                dd: 1.0,
            },
            QuadForms {
                yy: 10.0,
                yd: 1.0,
                dd: 5.0,
            },
            1,
        );
        let fit = tsls_fit(&cache).unwrap();
        assert_eq!(
            sargan_statistic(&cache, &fit, 0.01),
            Err(Error::JustIdentified(1))
        );
    }

    #[test]
    fn exact_fit_is_degenerate() {
        let n = 40;
        let z = DMatrix::from_fn(n, 3, |i, j| (((i + 1) * (j + 2)) as f64 * 0.37).sin());
        let mut d = &z * DVector::from_vec(vec![1.0, -0.5, 0.8]);
        for i in 0..n {
            d[i] += 0.01 * ((i * i) as f64 * 0.11).cos();
        }
        let y = &d * 1.5;
        let data = IvDataset::new(y, d, z, None).unwrap();
        let cache = build_projection_cache(&data, &SubsetSpec::empty(3)).unwrap();
        assert!(matches!(tsls_fit(&cache), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn clr_rejects_too_few_draws() {
        let cache = cache_with(
            QuadForms {
                yy: 4.0,
                yd: 2.0,
                dd: 1.0,
            },
            QuadForms {
                yy: 10.0,
                yd: 1.0,
                dd: 5.0,
            },
            3,
        );
        assert!(matches!(
            clr_statistic(0.0, &cache, 0.05, 999, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn conditional_lr_limits() {
        // qt = 0: LR = Q_S, chi2(k).
        assert!((conditional_lr(1.5, 2.5, 0.0) - 4.0).abs() < 1e-12);
        // qt -> inf: LR -> Q_1.
        assert!((conditional_lr(1.5, 2.5, 1e9) - 1.5).abs() < 1e-6);
    }

    #[test]
    fn critical_table_is_decreasing_in_qt() {
        let t = ClrCriticalTable::new(4, 0.05, 20_000, 7).unwrap();
        let chi_k = chi_square_quantile(0.95, 4).unwrap();
        let chi_1 = chi_square_quantile(0.95, 1).unwrap();
        assert!((t.critical_value(0.0) - chi_k).abs() < 0.3);
        assert!((t.critical_value(1e8) - chi_1).abs() < 0.2);
        let mut prev = f64::INFINITY;
        for qt in [0.0, 0.01, 1.0, 10.0, 100.0, 1e4] {
            let c = t.critical_value(qt);
            assert!(c <= prev + 0.05, "not decreasing at {qt}");
            prev = c;
        }
    }
}
