//! Quantile-quantile extraction and intensity density curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::calibration::percentile_sorted;

/// Evenly spaced probabilities `(k + 0.5) / n`.
pub fn probability_grid(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| (k as f64 + 0.5) / n as f64)
}

/// Matched empirical quantiles of two real-valued samples.
pub fn qq_pairs(sample_a: &[f64], sample_b: &[f64], n_quantiles: usize) -> Result<Vec<(f64, f64)>> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(Error::EmptyInput("qq sample"));
    }
    if n_quantiles == 0 {
        return Err(Error::InvalidParameter(
            "n_quantiles must be positive".into(),
        ));
    }
    let sort = |s: &[f64]| {
        let mut v = s.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (a, b) = (sort(sample_a), sort(sample_b));
    Ok(probability_grid(n_quantiles)
        .map(|p| (percentile_sorted(&a, p), percentile_sorted(&b, p)))
        .collect())
}

/// A probability mass over the 256 intensity levels, either empirical
/// (pooled pixel counts) or analytic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityDistribution {
    mass: Vec<f64>,
    total: f64,
}

impl Default for IntensityDistribution {
    fn default() -> Self {
        IntensityDistribution {
            mass: vec![0.0; 256],
            total: 0.0,
        }
    }
}

impl IntensityDistribution {
    pub fn from_weights(weights: &[f64; 256]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::EmptyInput("intensity distribution has no mass"));
        }
        Ok(IntensityDistribution {
            mass: weights.to_vec(),
            total,
        })
    }

    pub fn from_pixels(pixels: &[u8]) -> Self {
        let mut d = IntensityDistribution::default();
        d.add_pixels(pixels);
        d
    }

    pub fn add_pixels(&mut self, pixels: &[u8]) {
        for &p in pixels {
            self.mass[usize::from(p)] += 1.0;
        }
        self.total += pixels.len() as f64;
    }

    pub fn merge(&mut self, other: &IntensityDistribution) {
        for (m, o) in self.mass.iter_mut().zip(&other.mass) {
            *m += o;
        }
        self.total += other.total;
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total <= 0.0
    }

    /// Raw (unnormalized) mass per level.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Normalized density per level.
    pub fn density(&self) -> Vec<f64> {
        self.mass.iter().map(|m| m / self.total).collect()
    }

    /// Smallest level whose cumulative probability reaches `p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let target = p.clamp(0.0, 1.0) * self.total;
        let mut acc = 0.0;
        for (level, &m) in self.mass.iter().enumerate() {
            acc += m;
            if acc >= target && m > 0.0 {
                return level as f64;
            }
        }
        self.mass.iter().rposition(|&m| m > 0.0).unwrap_or(255) as f64
    }

    pub fn mean(&self) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .map(|(l, m)| l as f64 * m)
            .sum::<f64>()
            / self.total
    }

    pub fn qq(&self, other: &IntensityDistribution, n_quantiles: usize) -> Result<Vec<(f64, f64)>> {
        if self.is_empty() || other.is_empty() {
            return Err(Error::EmptyInput("qq distribution"));
        }
        Ok(probability_grid(n_quantiles)
            .map(|p| (self.quantile(p), other.quantile(p)))
            .collect())
    }
}

/// Largest `|qa - qb|` over a set of QQ pairs.
pub fn max_qq_deviation(pairs: &[(f64, f64)]) -> f64 {
    pairs.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}
