use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An acceptance threshold set at an empirical percentile of a statistic
/// computed on a reference (true) ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceCalibration {
    pub statistic_name: String,
    pub percentile: f64,
    pub threshold: f64,
    pub calibration_size: usize,
}

impl ToleranceCalibration {
    /// A statistic passes when it does not exceed the threshold.
    pub fn accepts(&self, statistic: f64) -> bool {
        statistic <= self.threshold
    }
}

/// Linear interpolation between order statistics at rank `(n - 1) * p`.
/// `sorted` must be ascending and non-empty.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

pub fn calibrate_tolerance(
    statistic_name: &str,
    statistics: &[f64],
    percentile: f64,
) -> Result<ToleranceCalibration> {
    if statistics.is_empty() {
        return Err(Error::EmptyInput("no calibration statistics"));
    }
    if !(percentile > 0.0 && percentile < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "percentile must lie in (0, 1), got {percentile}"
        )));
    }
    if statistics.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter(
            "non-finite calibration statistic".into(),
        ));
    }
    Ok(ToleranceCalibration {
        statistic_name: statistic_name.to_string(),
        percentile,
        threshold: self::percentile(statistics, percentile)?,
        calibration_size: statistics.len(),
    })
}
