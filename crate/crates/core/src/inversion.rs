//! Test inversion: the set of `beta0` values a level-`alpha` test does not
//! reject.
//!
//! Anderson-Rubin acceptance is a quadratic inequality in `beta0`, solved in
//! closed form so unbounded sets are detected exactly. Wald acceptance is the
//! familiar symmetric interval. CLR has no closed form and is inverted on a
//! grid with bisection refinement of every accept/reject flip.

use serde::{Deserialize, Serialize};

use crate::distributions::{f_quantile, normal_quantile};
use crate::error::{Error, Result};
use crate::interval::{Interval, RealIntervalSet};
use crate::model::ProjectionCache;
use crate::stats::{tsls_fit, ClrCriticalTable, TslsFit, DEFAULT_CLR_DRAWS};

/// Relative size below which the leading coefficient counts as zero.
const LEADING_COEFF_TOL: f64 = 1e-12;

/// Evenly spaced `beta0` grid over `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        let g = Self { lo, hi, step };
        g.validate()?;
        Ok(g)
    }

    /// `points` grid values centred on `center`, spanning `center +- half_width`.
    pub fn centered(center: f64, half_width: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::Config("a grid needs at least two points".into()));
        }
        Self::new(
            center - half_width,
            center + half_width,
            2.0 * half_width / (points - 1) as f64,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) {
            return Err(Error::Config("grid bounds must be finite".into()));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::Config(format!(
                "grid step must be > 0, got {}",
                self.step
            )));
        }
        if !(self.lo < self.hi) {
            return Err(Error::Config(format!(
                "grid needs lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.hi - self.lo) / self.step * (1.0 + 1e-12)).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.len()
            && (self.lo + i as f64 * self.step - self.hi).abs() < 1e-9 * self.step
        {
            self.hi
        } else {
            self.lo + i as f64 * self.step
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }
}

/// Accepted set found on a grid, with flags for acceptance at the grid edges.
#[derive(Debug, Clone, PartialEq)]
pub struct GridInversion {
    pub set: RealIntervalSet,
    /// The lowest grid point was accepted.
    pub open_below: bool,
    /// The highest grid point was accepted.
    pub open_above: bool,
}

impl GridInversion {
    /// True when either side ran off the grid, so the reported unbounded side
    /// rests on the boundary rule rather than an analytic check.
    pub fn possibly_infinite(&self) -> bool {
        self.open_below || self.open_above
    }
}

/// `{x : a x^2 - 2 b x + c <= 0}`. `scale` sets the threshold under which `a`
/// is treated as zero.
pub fn quadratic_acceptance(a: f64, b: f64, c: f64, scale: f64) -> RealIntervalSet {
    if a.abs() <= LEADING_COEFF_TOL * scale.abs().max(f64::MIN_POSITIVE) {
        // Linear: -2 b x + c <= 0.
        return if b > 0.0 {
            RealIntervalSet::single(c / (2.0 * b), f64::INFINITY)
        } else if b < 0.0 {
            RealIntervalSet::single(f64::NEG_INFINITY, c / (2.0 * b))
        } else if c <= 0.0 {
            RealIntervalSet::whole_line()
        } else {
            RealIntervalSet::empty()
        };
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return if a > 0.0 {
            RealIntervalSet::empty()
        } else {
            RealIntervalSet::whole_line()
        };
    }
    let root = disc.sqrt();
    let s = if b >= 0.0 { b + root } else { b - root };
    let (r1, r2) = if s == 0.0 { (0.0, 0.0) } else { (s / a, c / s) };
    let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    if a > 0.0 {
        RealIntervalSet::single(lo, hi)
    } else {
        RealIntervalSet::from_intervals([
            Interval::new(f64::NEG_INFINITY, lo),
            Interval::new(hi, f64::INFINITY),
        ])
    }
}

/// Closed-form AR acceptance for a precomputed critical value `q` of
/// `F(df_num, df_den)`.
pub fn invert_ar_at(cache: &ProjectionCache, q: f64) -> RealIntervalSet {
    let qs = q * cache.df_num as f64 / cache.df_den as f64;
    let (m, r) = (cache.middle, cache.residual);
    quadratic_acceptance(
        m.dd - qs * r.dd,
        m.yd - qs * r.yd,
        m.yy - qs * r.yy,
        m.dd + qs * r.dd,
    )
}

/// Anderson-Rubin confidence set at level `1 - alpha`.
pub fn invert_ar(cache: &ProjectionCache, alpha: f64) -> Result<RealIntervalSet> {
    check_alpha(alpha)?;
    let q = f_quantile(1.0 - alpha, cache.df_num, cache.df_den)?;
    Ok(invert_ar_at(cache, q))
}

/// `beta_hat +- z_{1 - alpha/2} se`.
pub fn invert_wald(fit: &TslsFit, alpha: f64) -> Result<RealIntervalSet> {
    check_alpha(alpha)?;
    let half = normal_quantile(1.0 - alpha / 2.0)? * fit.std_err;
    Ok(RealIntervalSet::single(
        fit.beta_hat - half,
        fit.beta_hat + half,
    ))
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

/// Grid inversion of an arbitrary p-value function: accepted grid points
/// merged into maximal runs `[g_i, g_j]`. No refinement, no extension past
/// the grid.
pub fn grid_invert(
    p_value: impl Fn(f64) -> Result<f64>,
    alpha: f64,
    grid: &GridSpec,
) -> Result<GridInversion> {
    check_alpha(alpha)?;
    grid.validate()?;
    let accepted = grid
        .points()
        .map(|b| p_value(b).map(|p| p >= alpha))
        .collect::<Result<Vec<_>>>()?;
    runs_to_inversion(&accepted, |i| grid.point(i), |i| grid.point(i), false)
}

/// Shared run-merging for grid inversions. `lower`/`upper` map the first and
/// last accepted index of a run to the reported endpoints.
fn runs_to_inversion(
    accepted: &[bool],
    mut lower: impl FnMut(usize) -> f64,
    mut upper: impl FnMut(usize) -> f64,
    extend: bool,
) -> Result<GridInversion> {
    let last = accepted.len() - 1;
    let mut pieces = Vec::new();
    let mut i = 0;
    while i <= last {
        if !accepted[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < last && accepted[i + 1] {
            i += 1;
        }
        let (mut lo, mut hi) = (lower(start), upper(i));
        if extend && start == 0 {
            lo = f64::NEG_INFINITY;
        }
        if extend && i == last {
            hi = f64::INFINITY;
        }
        pieces.push(Interval::new(lo, hi));
        i += 1;
    }
    Ok(GridInversion {
        set: RealIntervalSet::from_intervals(pieces),
        open_below: accepted[0],
        open_above: accepted[last],
    })
}

/// Bisects between an accepted point and a rejected point until the bracket
/// is narrower than `tol`; returns the last accepted abscissa.
fn bisect_edge(
    accept: &impl Fn(f64) -> Result<bool>,
    mut inside: f64,
    mut outside: f64,
    tol: f64,
) -> Result<f64> {
    while (outside - inside).abs() > tol {
        let mid = 0.5 * (inside + outside);
        if mid == inside || mid == outside {
            break;
        }
        if accept(mid)? {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    Ok(inside)
}

/// Monte Carlo settings for CLR conditional critical values and grid
/// inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClrSettings {
    pub draws: usize,
    pub seed: u64,
    /// Bisection tolerance for refined interval endpoints.
    pub refine_tol: f64,
    /// Grid points of the default grid.
    pub grid_points: usize,
    /// Half-width of the default grid in TSLS standard errors.
    pub grid_half_width_se: f64,
}

impl Default for ClrSettings {
    fn default() -> Self {
        Self {
            draws: DEFAULT_CLR_DRAWS,
            seed: 20_160_501,
            refine_tol: 1e-6,
            grid_points: 4001,
            grid_half_width_se: 20.0,
        }
    }
}

/// Default CLR grid: the subset's TSLS estimate `+- 20 se`, 4001 points.
pub fn default_clr_grid(cache: &ProjectionCache, settings: &ClrSettings) -> Result<GridSpec> {
    let fit = tsls_fit(cache)?;
    let half = settings.grid_half_width_se * fit.std_err;
    if !(half > 0.0 && half.is_finite()) {
        return Err(Error::Identification(
            "cannot centre CLR grid: TSLS standard error is not finite".into(),
        ));
    }
    GridSpec::centered(fit.beta_hat, half, settings.grid_points)
}

/// CLR confidence set on `grid`, endpoints refined by bisection. A side whose
/// outermost grid point is accepted is reported unbounded and flagged in the
/// returned [`GridInversion`].
pub fn invert_clr(
    cache: &ProjectionCache,
    alpha: f64,
    grid: &GridSpec,
    settings: &ClrSettings,
) -> Result<GridInversion> {
    check_alpha(alpha)?;
    grid.validate()?;
    let table = ClrCriticalTable::shared(cache.df_num, alpha, settings.draws, settings.seed)?;
    invert_clr_with_table(cache, grid, &table, settings.refine_tol)
}

/// [`invert_clr`] with a caller-supplied critical-value table.
pub fn invert_clr_with_table(
    cache: &ProjectionCache,
    grid: &GridSpec,
    table: &ClrCriticalTable,
    refine_tol: f64,
) -> Result<GridInversion> {
    let accept = |b: f64| table.accepts(b, cache);
    let accepted = grid.points().map(accept).collect::<Result<Vec<_>>>()?;
    let mut err = None;
    let mut refine =
        |inside: f64, outside: f64| match bisect_edge(&accept, inside, outside, refine_tol) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                inside
            }
        };
    let mut lows = Vec::new();
    let mut highs = Vec::new();
    for i in 0..accepted.len() {
        if accepted[i] && (i == 0 || !accepted[i - 1]) {
            lows.push(if i == 0 {
                grid.point(0)
            } else {
                refine(grid.point(i), grid.point(i - 1))
            });
        }
        if accepted[i] && (i + 1 == accepted.len() || !accepted[i + 1]) {
            highs.push(if i + 1 == accepted.len() {
                grid.point(i)
            } else {
                refine(grid.point(i), grid.point(i + 1))
            });
        }
    }
    if let Some(e) = err {
        return Err(e);
    }
    let (mut lo_it, mut hi_it) = (lows.into_iter(), highs.into_iter());
    runs_to_inversion(
        &accepted,
        |_| lo_it.next().unwrap_or(f64::NAN),
        |_| hi_it.next().unwrap_or(f64::NAN),
        true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuadForms;
    use crate::stats::ar_statistic;

    fn cache(middle: QuadForms, residual: QuadForms, df_num: usize) -> ProjectionCache {
        ProjectionCache {
            middle,
            residual,
            df_num,
            df_den: 200,
            subset_size: 0,
            n: 200 + df_num,
            absorbed: 0,
        }
    }

    #[test]
    fn quadratic_cases() {
        // (x-1)(x-3) = x^2 - 4x + 3
        let s = quadratic_acceptance(1.0, 2.0, 3.0, 1.0);
        assert_eq!(s, RealIntervalSet::single(1.0, 3.0));
        // positive definite: empty
        assert!(quadratic_acceptance(1.0, 0.0, 1.0, 1.0).is_empty());
        // negative definite: whole line
        assert!(quadratic_acceptance(-1.0, 0.0, -1.0, 1.0).is_whole_line());
        // -(x-1)(x-3) <= 0: two rays
        let s = quadratic_acceptance(-1.0, -2.0, -3.0, 1.0);
        assert_eq!(
            s.intervals(),
            &[
                Interval::new(f64::NEG_INFINITY, 1.0),
                Interval::new(3.0, f64::INFINITY)
            ]
        );
        // linear: -2x + 4 <= 0 -> x >= 2
        assert_eq!(
            quadratic_acceptance(1e-20, 1.0, 4.0, 1.0),
            RealIntervalSet::single(2.0, f64::INFINITY)
        );
    }

    #[test]
    fn wald_interval_arithmetic() {
        let fit = TslsFit {
            beta_hat: 2.0,
            std_err: 0.1,
            residual_variance: 1.0,
            first_stage_f: 10.0,
            df_num: 2,
        };
        let s = invert_wald(&fit, 0.05).unwrap();
        let i = s.intervals()[0];
        assert!((i.lo - 1.804).abs() < 1e-3 && (i.hi - 2.196).abs() < 1e-3);
        assert!(s.contains(2.0));
    }

    #[test]
    fn grid_invert_constant_tests() {
        let g = GridSpec::new(-1.0, 1.0, 0.5).unwrap();
        let all = grid_invert(|_| Ok(1.0), 0.05, &g).unwrap();
        assert_eq!(all.set, RealIntervalSet::single(-1.0, 1.0));
        assert!(all.open_below && all.open_above);
        let none = grid_invert(|_| Ok(0.0), 0.05, &g).unwrap();
        assert!(none.set.is_empty());
    }

    #[test]
    fn grid_config_errors() {
        assert!(GridSpec::new(f64::NEG_INFINITY, 1.0, 0.1).is_err());
        assert!(GridSpec::new(0.0, 1.0, 0.0).is_err());
        assert!(GridSpec::new(1.0, 0.0, 0.1).is_err());
        assert_eq!(GridSpec::new(0.0, 1.0, 0.25).unwrap().len(), 5);
    }

    #[test]
    fn ar_closed_form_agrees_with_grid() {
        let c = cache(
            QuadForms {
                yy: 40.0,
                yd: 18.0,
                dd: 9.5,
            },
            QuadForms {
                yy: 210.0,
                yd: 30.0,
                dd: 190.0,
            },
            3,
        );
        let closed = invert_ar(&c, 0.05).unwrap();
        assert!(closed.is_bounded());
        let g = GridSpec::new(-10.0, 30.0, 1e-3).unwrap();
        let grid = grid_invert(|b| Ok(ar_statistic(b, &c, 0.05)?.p_value), 0.05, &g).unwrap();
        assert_eq!(closed.intervals().len(), grid.set.intervals().len());
        for (a, b) in closed.intervals().iter().zip(grid.set.intervals()) {
            assert!((a.lo - b.lo).abs() <= 1e-3 && (a.hi - b.hi).abs() <= 1e-3);
        }
    }

    #[test]
    fn ar_nesting_in_level() {
        let c = cache(
            QuadForms {
                yy: 40.0,
                yd: 18.0,
                dd: 9.5,
            },
            QuadForms {
                yy: 210.0,
                yd: 30.0,
                dd: 190.0,
            },
            3,
        );
        let wide = invert_ar(&c, 0.01).unwrap();
        let narrow = invert_ar(&c, 0.10).unwrap();
        assert!(narrow.is_subset_of(&wide));
    }

    #[test]
    fn clr_all_accepted_is_whole_line() {
        // No instrument signal at all: nothing is ever rejected.
        let c = cache(
            QuadForms {
                yy: 1e-6,
                yd: 0.0,
                dd: 1e-6,
            },
            QuadForms {
                yy: 200.0,
                yd: 10.0,
                dd: 200.0,
            },
            3,
        );
        let g = GridSpec::new(-5.0, 5.0, 0.01).unwrap();
        let inv = invert_clr(&c, 0.05, &g, &ClrSettings::default()).unwrap();
        assert!(inv.set.is_whole_line());
        assert!(inv.open_below && inv.open_above && inv.possibly_infinite());
    }
}
