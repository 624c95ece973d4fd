//! Probability kernels: normal, chi-square and F distributions, central and
//! noncentral.
//!
//! Noncentral CDFs are Poisson-weighted mixtures of central CDFs. The series is
//! summed outward from the Poisson mode and stops once the unvisited Poisson
//! mass drops below [`MIXTURE_TAIL_MASS`], so the truncation error is bounded
//! independently of the noncentrality. Quantiles are found by bisection on the
//! (monotone) CDF. Gamma-function prefactors are evaluated in log space, which
//! keeps denominators with a million degrees of freedom finite.

use libm::erfc;
use statrs::function::{beta::beta_reg, gamma};

use crate::error::{Error, Result};

/// Residual Poisson mass at which mixture series are truncated.
pub const MIXTURE_TAIL_MASS: f64 = 1e-12;

/// Degrees of freedom and noncentrality of an F (or chi-square) law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistParams {
    pub df1: usize,
    pub df2: usize,
    pub noncentrality: f64,
}

impl DistParams {
    pub fn new(df1: usize, df2: usize, noncentrality: f64) -> Result<Self> {
        let params = Self {
            df1,
            df2,
            noncentrality,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn central(df1: usize, df2: usize) -> Result<Self> {
        Self::new(df1, df2, 0.0)
    }

    fn validate(&self) -> Result<()> {
        if self.df1 == 0 || self.df2 == 0 {
            return Err(Error::Domain(format!(
                "degrees of freedom must be >= 1, got ({}, {})",
                self.df1, self.df2
            )));
        }
        if !(self.noncentrality >= 0.0) || !self.noncentrality.is_finite() {
            return Err(Error::Domain(format!(
                "noncentrality must be finite and >= 0, got {}",
                self.noncentrality
            )));
        }
        Ok(())
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile, accurate to about 1e-15 in absolute terms.
///
/// Rational approximation (Acklam) followed by two Halley steps against the
/// erfc-based CDF.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile needs p in (0,1), got {p}"
        )));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let mut x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
    for _ in 0..2 {
        // Work on the smaller tail to avoid cancellation in cdf - p.
        let e = if x < 0.0 {
            0.5 * erfc(-x / std::f64::consts::SQRT_2) - p
        } else {
            (1.0 - p) - 0.5 * erfc(x / std::f64::consts::SQRT_2)
        };
        let u = e * sqrt_2pi * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

fn central_chi_square_cdf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma::gamma_lr(0.5 * df, 0.5 * x)
    }
}

fn central_f_cdf(x: f64, df1: f64, df2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let t = df1 * x;
    beta_reg(0.5 * df1, 0.5 * df2, t / (t + df2))
}

fn central_f_sf(x: f64, df1: f64, df2: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let t = df1 * x;
    beta_reg(0.5 * df2, 0.5 * df1, df2 / (t + df2))
}

/// Sums `sum_j Pois(j; half_lambda) * term(j)`, starting at the Poisson mode
/// and walking both ways until the unvisited mass falls below
/// [`MIXTURE_TAIL_MASS`].
fn poisson_mixture(half_lambda: f64, term: impl Fn(usize) -> f64) -> f64 {
    if half_lambda == 0.0 {
        return term(0);
    }
    let mode = half_lambda.floor() as usize;
    let log_w_mode =
        -half_lambda + mode as f64 * half_lambda.ln() - gamma::ln_gamma(mode as f64 + 1.0);
    let w_mode = log_w_mode.exp();

    let mut total = 0.0;
    let mut mass = 0.0;

    // Downward from the mode; weights shrink monotonically.
    let mut w = w_mode;
    let mut j = mode;
    loop {
        total += w * term(j);
        mass += w;
        if j == 0 || w < MIXTURE_TAIL_MASS * 1e-6 {
            break;
        }
        w *= j as f64 / half_lambda;
        j -= 1;
    }

    // Upward past the mode until the remaining tail is negligible.
    let mut w = w_mode;
    let mut j = mode;
    let cap = mode + 64 + (40.0 * half_lambda.sqrt()) as usize + 1_000;
    while 1.0 - mass >= MIXTURE_TAIL_MASS && j < cap {
        w *= half_lambda / (j + 1) as f64;
        j += 1;
        total += w * term(j);
        mass += w;
        if w == 0.0 {
            break;
        }
    }
    total
}

/// CDF of the (possibly noncentral) chi-square law with `df` degrees of freedom.
pub fn chi_square_cdf(x: f64, df: usize, noncentrality: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!(
            "chi-square CDF needs x >= 0, got {x}"
        )));
    }
    DistParams::new(df, 1, noncentrality)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let df = df as f64;
    let value = poisson_mixture(0.5 * noncentrality, |j| {
        central_chi_square_cdf(x, df + 2.0 * j as f64)
    });
    Ok(value.clamp(0.0, 1.0))
}

/// Upper tail of the central chi-square law, computed directly for accuracy
/// in the far tail.
pub fn chi_square_sf(x: f64, df: usize) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!(
            "chi-square survival needs x >= 0, got {x}"
        )));
    }
    DistParams::central(df, 1)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma::gamma_ur(0.5 * df as f64, 0.5 * x))
}

/// Central F CDF.
pub fn f_cdf(x: f64, df1: usize, df2: usize) -> Result<f64> {
    noncentral_f_cdf(x, DistParams::central(df1, df2)?)
}

/// Upper tail of the central F law, `1 - f_cdf`, computed without cancellation.
pub fn f_sf(x: f64, df1: usize, df2: usize) -> Result<f64> {
    DistParams::central(df1, df2)?;
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("F survival needs x >= 0, got {x}")));
    }
    Ok(central_f_sf(x, df1 as f64, df2 as f64))
}

/// `P(F <= x)` for `F ~ F(df1, df2, noncentrality)`.
pub fn noncentral_f_cdf(x: f64, params: DistParams) -> Result<f64> {
    params.validate()?;
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("F CDF needs x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let d1 = params.df1 as f64;
    let d2 = params.df2 as f64;
    let t = d1 * x;
    let y = t / (t + d2);
    let value = poisson_mixture(0.5 * params.noncentrality, |j| {
        beta_reg(0.5 * d1 + j as f64, 0.5 * d2, y)
    });
    Ok(value.clamp(0.0, 1.0))
}

/// Inverts a non-decreasing CDF on `[0, inf)` by bracketing and bisection.
fn invert_cdf(p: f64, cdf: impl Fn(f64) -> f64) -> f64 {
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Quantile of the central F law.
pub fn f_quantile(p: f64, df1: usize, df2: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "F quantile needs p in (0,1), got {p}"
        )));
    }
    DistParams::central(df1, df2)?;
    let (d1, d2) = (df1 as f64, df2 as f64);
    Ok(invert_cdf(p, |x| central_f_cdf(x, d1, d2)))
}

/// Quantile of the central chi-square law.
pub fn chi_square_quantile(p: f64, df: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "chi-square quantile needs p in (0,1), got {p}"
        )));
    }
    DistParams::central(df, 1)?;
    let df = df as f64;
    Ok(invert_cdf(p, |x| central_chi_square_cdf(x, df)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_quantile_reference_points() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        // sqrt(2) * erfinv(0.95) to 16 digits.
        assert_abs_diff_eq!(
            normal_quantile(0.975).unwrap(),
            1.959_963_984_540_054,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            normal_quantile(0.025).unwrap(),
            -1.959_963_984_540_054,
            epsilon = 1e-12
        );
        for p in [1e-12, 1e-6, 0.01, 0.3, 0.7, 0.99, 1.0 - 1e-9] {
            let z = normal_quantile(p).unwrap();
            assert!((normal_cdf(z) - p).abs() <= 1e-10 * p.max(1e-3), "p = {p}");
        }
    }

    #[test]
    fn normal_quantile_rejects_boundaries() {
        assert!(matches!(normal_quantile(0.0), Err(Error::Domain(_))));
        assert!(matches!(normal_quantile(1.0), Err(Error::Domain(_))));
        assert!(normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn chi_square_lower_boundary_is_zero() {
        for df in [1, 3, 40] {
            for lambda in [0.0, 2.5, 100.0] {
                assert_eq!(chi_square_cdf(0.0, df, lambda).unwrap(), 0.0);
            }
        }
        assert!(chi_square_cdf(-1.0, 2, 0.0).is_err());
    }

    #[test]
    fn f_cdf_handles_huge_denominator_df() {
        let v = f_cdf(2.0, 5, 1_000_000).unwrap();
        assert!(v.is_finite() && v > 0.9 && v < 1.0);
        let q = f_quantile(0.95, 5, 1_000_000).unwrap();
        // F(5, inf) = chi2_5 / 5.
        let chi = chi_square_quantile(0.95, 5).unwrap() / 5.0;
        assert!((q - chi).abs() < 1e-3);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(DistParams::new(0, 3, 0.0).is_err());
        assert!(DistParams::new(3, 0, 0.0).is_err());
        assert!(DistParams::new(3, 3, -1.0).is_err());
        assert!(DistParams::new(3, 3, f64::NAN).is_err());
        assert!(f_quantile(1.0, 2, 2).is_err());
    }

    #[test]
    fn survival_matches_complement() {
        for &(x, d1, d2) in &[(0.5, 2, 10), (2.1, 6, 4990), (7.0, 1, 30)] {
            let c = f_cdf(x, d1, d2).unwrap();
            let s = f_sf(x, d1, d2).unwrap();
            assert_abs_diff_eq!(c + s, 1.0, epsilon = 1e-13);
        }
        let c = chi_square_cdf(4.0, 3, 0.0).unwrap();
        assert_abs_diff_eq!(c + chi_square_sf(4.0, 3).unwrap(), 1.0, epsilon = 1e-14);
    }
}
