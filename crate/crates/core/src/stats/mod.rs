//! Statistical kernels shared by the SOM validators.

pub mod beta;
pub mod calibration;
pub mod chi_square;
pub mod frechet;
pub mod histogram;
pub mod moran;
pub mod qq;
pub mod spearman;

pub use beta::{sample_scaled_beta, BetaSpec, ScaledBetaSampler};
pub use calibration::{calibrate_tolerance, percentile, ToleranceCalibration};
pub use chi_square::{chi_square_gof, ChiSquare, Expected};
pub use frechet::{frechet_distance, GaussianSummary};
pub use histogram::Histogram;
pub use moran::{morans_index, Adjacency, MoranStatistic, MoranWeights};
pub use qq::{qq_pairs, IntensityDistribution};
pub use spearman::spearman_rho;

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Upper critical value of a chi-square distribution: `P(X <= x) = p`.
pub fn chi_square_critical(dof: usize, p: f64) -> f64 {
    ChiSquared::new(dof as f64)
        .map(|d| d.inverse_cdf(p))
        .unwrap_or(f64::NAN)
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    #[test]
    fn chi_square_critical_values() {
        assert!((super::chi_square_critical(7, 0.99) - 18.475).abs() < 1e-3);
        assert!((super::chi_square_critical(99, 0.99) - 134.642).abs() < 1e-3);
    }
}
