//! Exact power of the Anderson-Rubin test when some instruments may be
//! invalid.
//!
//! Under Gaussian errors with a fixed instrument design, `AR(beta0, B)` is
//! noncentral `F(L - c(B), n - L, eta)` with
//! `eta = || R_{Z_B} Z_{B^c} (pi_{B^c} + gamma_{B^c} (beta* - beta0)) ||^2 / s2`
//! where `s2 = sigma2^2 + d^2 sigma1^2 + 2 d rho sigma1 sigma2`, `d = beta* - beta0`,
//! is the variance of `eps + d * xi`. Both quadratic forms of the statistic
//! share that scale, so it has to be divided out of the noncentrality.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::distributions::{f_quantile, noncentral_f_cdf, DistParams};
use crate::error::{Error, Result};
use crate::model::SubsetSpec;

/// Everything that determines the AR rejection probability at one `beta0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpec {
    pub beta_star: f64,
    pub beta0: f64,
    pub pi: DVector<f64>,
    pub gamma: DVector<f64>,
    pub subset: SubsetSpec,
    /// Fixed `n x L` instrument matrix.
    pub design: DMatrix<f64>,
    pub alpha: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
}

/// `R_{Z_B} Z_{B^c} pi_{B^c}` and `R_{Z_B} Z_{B^c} gamma_{B^c}`, reused across `beta0`.
#[derive(Debug, Clone)]
struct Directions {
    pi_part: DVector<f64>,
    gamma_part: DVector<f64>,
}

impl PowerSpec {
    fn validate(&self) -> Result<()> {
        let (n, l) = self.design.shape();
        if self.pi.len() != l || self.gamma.len() != l || self.subset.l() != l {
            return Err(Error::Dimension(format!(
                "design has L = {l}, pi has {}, gamma has {}, subset built for {}",
                self.pi.len(),
                self.gamma.len(),
                self.subset.l()
            )));
        }
        if n <= l {
            return Err(Error::Dimension(format!(
                "need n > L, got n = {n}, L = {l}"
            )));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Config(format!(
                "|rho| must be < 1, got {}",
                self.rho
            )));
        }
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0) {
            return Err(Error::Config(
                "error standard deviations must be positive".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Variance of `eps + (beta* - beta0) xi`.
    pub fn scale(&self, beta0: f64) -> Result<f64> {
        let d = self.beta_star - beta0;
        let s2 = self.sigma2 * self.sigma2
            + d * d * self.sigma1 * self.sigma1
            + 2.0 * d * self.rho * self.sigma1 * self.sigma2;
        if !(s2 > 0.0) {
            return Err(Error::Config(format!(
                "error covariance is not positive definite at beta0 = {beta0} (scale {s2})"
            )));
        }
        Ok(s2)
    }

    fn directions(&self) -> Directions {
        let comp = self.subset.complement();
        let n = self.design.nrows();
        let zc = DMatrix::from_fn(n, comp.len(), |i, c| self.design[(i, comp[c])]);
        let pick =
            |v: &DVector<f64>| DVector::from_iterator(comp.len(), comp.iter().map(|&j| v[j]));
        let mut pi_part = &zc * pick(&self.pi);
        let mut gamma_part = &zc * pick(&self.gamma);
        if self.subset.size() > 0 {
            let idx = self.subset.indices();
            let zb = DMatrix::from_fn(n, idx.len(), |i, c| self.design[(i, idx[c])]);
            let q = zb.qr().q();
            pi_part -= &q * q.tr_mul(&pi_part);
            gamma_part -= &q * q.tr_mul(&gamma_part);
        }
        Directions {
            pi_part,
            gamma_part,
        }
    }

    fn df(&self) -> (usize, usize) {
        let (n, l) = self.design.shape();
        (self.subset.complement_size(), n - l)
    }
}

fn eta_from(spec: &PowerSpec, dirs: &Directions, beta0: f64) -> Result<f64> {
    let d = spec.beta_star - beta0;
    let v = &dirs.pi_part + &dirs.gamma_part * d;
    Ok(v.norm_squared() / spec.scale(beta0)?)
}

/// Noncentrality `eta(B)` at `spec.beta0`, scaled by the error variance.
pub fn noncentrality(spec: &PowerSpec) -> Result<f64> {
    spec.validate()?;
    eta_from(spec, &spec.directions(), spec.beta0)
}

fn power_from_eta(eta: f64, df: (usize, usize), critical: f64) -> Result<f64> {
    let cdf = noncentral_f_cdf(critical, DistParams::new(df.0, df.1, eta)?)?;
    Ok((1.0 - cdf).clamp(0.0, 1.0))
}

/// `1 - F_{L-c(B), n-L, eta}(q)` with `q` the central `1 - alpha` quantile.
pub fn ar_power_exact(spec: &PowerSpec) -> Result<f64> {
    let eta = noncentrality(spec)?;
    let df = spec.df();
    let critical = f_quantile(1.0 - spec.alpha, df.0, df.1)?;
    power_from_eta(eta, df, critical)
}

/// One row of a power table.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PowerPoint {
    pub beta0: f64,
    pub eta: f64,
    pub power_exact: f64,
    pub power_mc: Option<f64>,
}

/// Exact AR power at each `beta0` of `grid`; `template.beta0` is ignored.
pub fn power_curve(template: &PowerSpec, grid: &[f64]) -> Result<Vec<PowerPoint>> {
    if grid.is_empty() {
        return Err(Error::Config(
            "power curve needs a non-empty beta0 grid".into(),
        ));
    }
    template.validate()?;
    let dirs = template.directions();
    let df = template.df();
    let critical = f_quantile(1.0 - template.alpha, df.0, df.1)?;
    grid.par_iter()
        .map(|&beta0| {
            let eta = eta_from(template, &dirs, beta0)?;
            Ok(PowerPoint {
                beta0,
                eta,
                power_exact: power_from_eta(eta, df, critical)?,
                power_mc: None,
            })
        })
        .collect()
}

/// Writes `beta0,power_exact[,power_mc]` rows. The MC column appears only
/// when every point carries a Monte Carlo estimate.
pub fn write_power_csv<W: Write>(out: W, points: &[PowerPoint]) -> Result<()> {
    let with_mc = !points.is_empty() && points.iter().all(|p| p.power_mc.is_some());
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Data(format!("writing power table: {e}"));
    if with_mc {
        w.write_record(["beta0", "power_exact", "power_mc"])
            .map_err(io)?;
    } else {
        w.write_record(["beta0", "power_exact"]).map_err(io)?;
    }
    for p in points {
        let mut row = vec![p.beta0.to_string(), p.power_exact.to_string()];
        if with_mc {
            row.push(p.power_mc.unwrap().to_string());
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("writing power table: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(n: usize, l: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, l, |i, j| {
            (((i + 3) * (j + 1)) as f64 * 0.731).sin() + 0.1 * j as f64
        })
    }

    fn spec(b: Vec<usize>) -> PowerSpec {
        PowerSpec {
            beta_star: 2.0,
            beta0: 2.0,
            pi: DVector::from_vec(vec![0.5, 0.0, 0.0, 0.0]),
            gamma: DVector::from_vec(vec![0.3, 0.3, 0.3, 0.3]),
            subset: SubsetSpec::new(b, 4).unwrap(),
            design: design(30, 4),
            alpha: 0.05,
            sigma1: 1.0,
            sigma2: 1.0,
            rho: 0.5,
        }
    }

    #[test]
    fn no_power_at_truth_with_valid_complement() {
        let s = spec(vec![0]);
        assert_eq!(noncentrality(&s).unwrap(), 0.0);
        assert!((ar_power_exact(&s).unwrap() - 0.05).abs() < 1e-8);
    }

    #[test]
    fn offsetting_direction_has_no_power() {
        // pi_{B^c} = -gamma_{B^c} (beta* - beta0)
        let mut s = spec(vec![]);
        s.beta0 = 1.0;
        s.pi = -&s.gamma * (s.beta_star - s.beta0);
        assert!(noncentrality(&s).unwrap() < 1e-20);
    }

    #[test]
    fn wrong_subset_has_power_at_truth() {
        let s = spec(vec![1]);
        assert!(noncentrality(&s).unwrap() > 0.0);
        assert!(ar_power_exact(&s).unwrap() > 0.05);
    }

    #[test]
    fn matches_dense_residual_projection() {
        let mut s = spec(vec![2, 3]);
        s.beta0 = 1.4;
        let z = &s.design;
        let zb = DMatrix::from_fn(30, 2, |i, c| z[(i, [2, 3][c])]);
        let p = &zb * (zb.transpose() * &zb).try_inverse().unwrap() * zb.transpose();
        let r = DMatrix::identity(30, 30) - p;
        let zc = DMatrix::from_fn(30, 2, |i, c| z[(i, c)]);
        let d = s.beta_star - s.beta0;
        let v = DVector::from_vec(vec![s.pi[0] + s.gamma[0] * d, s.pi[1] + s.gamma[1] * d]);
        let w = r * zc * v;
        let s2 = 1.0 + d * d + 2.0 * d * 0.5;
        let eta = noncentrality(&s).unwrap();
        assert!((eta - w.norm_squared() / s2).abs() < 1e-10 * eta.max(1.0));
    }

    #[test]
    fn invalid_covariance_rejected() {
        let mut s = spec(vec![]);
        s.rho = 1.0;
        assert!(noncentrality(&s).is_err());
    }

    #[test]
    fn power_csv_header() {
        let pts = [PowerPoint {
            beta0: 1.0,
            eta: 0.0,
            power_exact: 0.05,
            power_mc: None,
        }];
        let mut buf = Vec::new();
        write_power_csv(&mut buf, &pts).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "beta0,power_exact\n1,0.05\n"
        );
    }
}
