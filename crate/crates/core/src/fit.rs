//! Least-squares power-law fits used by the measurements.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope (zero for two points).
    pub stderr: f64,
}

impl PowerFit {
    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x.ln()).exp()
    }
}

/// Ordinary least squares of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<PowerFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Fit(x.len().min(y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Parameter("degenerate abscissae in fit".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if x.len() > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(PowerFit { slope, intercept, stderr })
}

/// Fit `y ~ C x^slope`; non-positive values are rejected.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> Result<PowerFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Parameter("log-log fit needs positive finite data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.5)).collect();
        let f = loglog_fit(&x, &y).unwrap();
        assert!((f.slope + 1.5).abs() < 1e-12);
        assert!((f.predict(16.0) - 3.0 * 16f64.powf(-1.5)).abs() < 1e-12);
        assert!(f.stderr < 1e-12);
    }

    #[test]
    fn rejects_short_or_nonpositive() {
        assert!(matches!(loglog_fit(&[1.0], &[1.0]), Err(Error::Fit(1))));
        assert!(loglog_fit(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn slope_invariant_under_scaling(a in -3.0f64..3.0, c in 0.1f64..10.0) {
            let x = [1.0, 3.0, 9.0];
            let y: Vec<f64> = x.iter().map(|v: &f64| c * v.powf(a)).collect();
            prop_assert!((loglog_fit(&x, &y).unwrap().slope - a).abs() < 1e-10);
        }
    }
}
