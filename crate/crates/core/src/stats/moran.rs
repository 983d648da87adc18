//! Moran's index of spatial autocorrelation on a regular grid.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Spatial weight scheme. Only binary rook (4-neighbour, no wraparound) weights
/// are provided.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjacency {
    #[default]
    Rook,
}

/// Weight sums `S0`, `S1`, `S2` for a grid, reused across tiles of one size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoranWeights {
    width: usize,
    height: usize,
    s0: f64,
    s1: f64,
    s2: f64,
}

impl MoranWeights {
    pub fn new(width: usize, height: usize, adjacency: Adjacency) -> Self {
        match adjacency {
            Adjacency::Rook => {
                let mut s2 = 0.0;
                for y in 0..height {
                    for x in 0..width {
                        let deg = usize::from(x > 0)
                            + usize::from(x + 1 < width)
                            + usize::from(y > 0)
                            + usize::from(y + 1 < height);
                        s2 += (2.0 * deg as f64).powi(2);
                    }
                }
                let edges =
                    (width.saturating_sub(1) * height + height.saturating_sub(1) * width) as f64;
                MoranWeights {
                    width,
                    height,
                    s0: 2.0 * edges,
                    s1: 4.0 * edges,
                    s2,
                }
            }
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.s0
    }
}

/// Moran's `I` with its moments under the randomization null hypothesis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoranStatistic {
    pub index: f64,
    pub expected: f64,
    pub variance: f64,
}

impl MoranStatistic {
    pub fn z_score(&self) -> f64 {
        (self.index - self.expected) / self.variance.sqrt()
    }

    /// Two-sided normal-approximation test: true when `I` falls outside the
    /// acceptance region at significance `alpha`.
    pub fn rejects_randomness(&self, alpha: f64) -> bool {
        self.z_score().abs() > two_sided_critical(alpha)
    }
}

/// `z` such that `P(|Z| > z) = alpha` for a standard normal.
pub fn two_sided_critical(alpha: f64) -> f64 {
    let normal = Normal::standard();
    normal.inverse_cdf(1.0 - alpha / 2.0)
}

pub fn morans_index(
    values: &[f64],
    width: usize,
    height: usize,
    adjacency: Adjacency,
) -> Result<MoranStatistic> {
    morans_index_with(values, &MoranWeights::new(width, height, adjacency))
}

/// `I = (N / W) * sum_ij w_ij z_i z_j / sum_i z_i^2` with `z = x - mean`.
pub fn morans_index_with(values: &[f64], weights: &MoranWeights) -> Result<MoranStatistic> {
    let (w, h) = (weights.width, weights.height);
    if values.len() != w * h {
        return Err(Error::InvalidParameter(format!(
            "{} values for a {w}x{h} grid",
            values.len()
        )));
    }
    let n = values.len() as f64;
    if values.len() < 4 || weights.s0 == 0.0 {
        return Err(Error::InvalidParameter(
            "grid too small for Moran's I".into(),
        ));
    }
    let mean = values.iter().sum::<f64>() / n;
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let m2: f64 = z.iter().map(|d| d * d).sum();
    if m2 <= f64::EPSILON * n * mean.abs().max(1.0) {
        return Err(Error::Degenerate("zero-variance tile"));
    }
    let m4: f64 = z.iter().map(|d| d.powi(4)).sum();

    let mut cross = 0.0;
    for y in 0..h {
        let row = &z[y * w..(y + 1) * w];
        for x in 0..w {
            if x + 1 < w {
                cross += row[x] * row[x + 1];
            }
            if y + 1 < h {
                cross += row[x] * z[(y + 1) * w + x];
            }
        }
    }
    // Each undirected edge carries weight 1 in both directions.
    let index = (n / weights.s0) * (2.0 * cross) / m2;

    let (s0, s1, s2) = (weights.s0, weights.s1, weights.s2);
    let expected = -1.0 / (n - 1.0);
    let kurt = n * m4 / (m2 * m2);
    let num = n * ((n * n - 3.0 * n + 3.0) * s1 - n * s2 + 3.0 * s0 * s0)
        - kurt * ((n * n - n) * s1 - 2.0 * n * s2 + 6.0 * s0 * s0);
    let den = (n - 1.0) * (n - 2.0) * (n - 3.0) * s0 * s0;
    let variance = num / den - expected * expected;
    Ok(MoranStatistic {
        index,
        expected,
        variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_stream;
    use rand::Rng;

    /// Literal double sum over an explicit weight matrix.
    fn brute_force(values: &[f64], w: usize, _h: usize) -> f64 {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let adj = |i: usize, j: usize| {
            let (xi, yi, xj, yj) = (i % w, i / w, j % w, j / w);
            (xi.abs_diff(xj) + yi.abs_diff(yj) == 1) as u8 as f64
        };
        let (mut num, mut wsum, mut den) = (0.0, 0.0, 0.0);
        for i in 0..n {
            den += (values[i] - mean).powi(2);
            for j in 0..n {
                let wij = adj(i, j);
                wsum += wij;
                num += wij * (values[i] - mean) * (values[j] - mean);
            }
        }
        n as f64 / wsum * num / den
    }

    #[test]
    fn checkerboard_is_minus_one() {
        let v: Vec<f64> = (0..256).map(|i| ((i % 16 + i / 16) % 2) as f64).collect();
        let s = morans_index(&v, 16, 16, Adjacency::Rook).unwrap();
        assert!((s.index + 1.0).abs() < 1e-12);
        assert!((brute_force(&v, 16, 16) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_halves_strongly_positive() {
        let v: Vec<f64> = (0..256)
            .map(|i| if i % 16 < 8 { 0.0 } else { 255.0 })
            .collect();
        let s = morans_index(&v, 16, 16, Adjacency::Rook).unwrap();
        assert!(s.index > 0.8, "{}", s.index);
        assert!((s.index - brute_force(&v, 16, 16)).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_on_random_tiles() {
        let mut rng = rng_stream(3, 0);
        for (w, h) in [(16, 16), (5, 7)] {
            let v: Vec<f64> = (0..w * h)
                .map(|_| rng.random_range(0..256) as f64)
                .collect();
            let s = morans_index(&v, w, h, Adjacency::Rook).unwrap();
            assert!((s.index - brute_force(&v, w, h)).abs() < 1e-12);
        }
    }

    #[test]
    fn random_tiles_average_to_null_expectation() {
        let mut rng = rng_stream(4, 0);
        let weights = MoranWeights::new(16, 16, Adjacency::Rook);
        let reps = 100_000;
        let mut v = vec![0.0; 256];
        let mut sum = 0.0;
        for _ in 0..reps {
            for x in v.iter_mut() {
                *x = rng.random::<f64>();
            }
            sum += morans_index_with(&v, &weights).unwrap().index;
        }
        let mean = sum / reps as f64;
        assert!((mean + 1.0 / 255.0).abs() < 0.001, "{mean}");
    }

    #[test]
    fn constant_tile_is_degenerate() {
        assert!(matches!(
            morans_index(&[7.0; 256], 16, 16, Adjacency::Rook),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn critical_value() {
        assert!((two_sided_critical(0.05) - 1.959964).abs() < 1e-5);
    }
}
