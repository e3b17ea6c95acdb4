use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Outcome of a two-sided Welch t-test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    /// `(mean(a) - mean(b)) / sqrt(var_a/n_a + var_b/n_b)`.
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    /// Two-sided critical value at `alpha`.
    pub critical: f64,
    pub alpha: f64,
    pub significant: bool,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Upper `1 - alpha/2` quantile of Student's t, by bisection on the CDF to 1e-9.
pub fn t_critical(df: f64, alpha: f64) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let target = 1.0 - alpha / 2.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while dist.cdf(hi) < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::InvalidParams(format!("no t quantile for df = {df}")));
        }
    }
    while hi - lo > 1e-9 {
        let mid = lo + (hi - lo) / 2.0;
        if dist.cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo + (hi - lo) / 2.0)
}

/// Welch's unequal-variance two-sample t-test, two-sided.
///
/// When both samples have zero variance the statistic is 0 for equal means
/// and infinite otherwise, with `n_a + n_b - 2` degrees of freedom.
pub fn two_sample_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientSamples);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("samples must be finite".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParams(format!("alpha {alpha} outside (0, 1)")));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;

    let (t, df) = if se2 == 0.0 {
        let t = if ma == mb { 0.0 } else { (ma - mb).signum() * f64::INFINITY };
        (t, na + nb - 2.0)
    } else {
        let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
        ((ma - mb) / se2.sqrt(), df)
    };
    let critical = t_critical(df, alpha)?;
    Ok(TTestResult { t, df, critical, alpha, significant: t.abs() > critical })
}
