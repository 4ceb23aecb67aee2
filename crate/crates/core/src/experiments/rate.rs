//! Log-log rate fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

/// Ordinary least squares `v = intercept + slope·u`; returns `(slope, intercept, stderr)`.
pub fn least_squares(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mu = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mu).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mu) * (p.1 - mv)).sum();
    let slope = sxy / sxx;
    let intercept = mv - slope * mu;
    let stderr = if points.len() > 2 {
        let rss: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, intercept, stderr)
}

/// Fit `log err = intercept + slope · log n`.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 2 {
        return Err(Error::Config(format!("rate fit needs at least 2 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.0 > 0.0 && p.1 > 0.0) || !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::Config(format!("rate fit needs positive finite values, got ({}, {})", p.0, p.1)));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(n, e)| (n.ln(), e.ln())).collect();
    if logs.iter().all(|p| p.0 == logs[0].0) {
        return Err(Error::Config("rate fit needs at least two distinct n".into()));
    }
    let (slope, intercept, stderr) = least_squares(&logs);
    Ok(RateFit { slope, intercept, stderr })
}
