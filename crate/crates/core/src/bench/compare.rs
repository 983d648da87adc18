//! Two-ensemble comparison: pooled intensity QQ, densities and Fréchet distance.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::raster::load_image;
use crate::stats::frechet::{frechet_distance, read_feature_csv, GaussianSummary};
use crate::stats::qq::{max_qq_deviation, probability_grid, IntensityDistribution};

use super::evaluate::discover_inputs;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub images_a: usize,
    pub images_b: usize,
    /// `(a, b)` quantile pairs on an evenly spaced probability grid.
    pub qq: Vec<(f64, f64)>,
    pub max_qq_deviation: f64,
    /// Normalized histograms over the 256 levels.
    pub density_a: Vec<f64>,
    pub density_b: Vec<f64>,
    /// Sum over levels of the smaller density; 1 for identical distributions.
    pub density_overlap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frechet_distance: Option<f64>,
}

/// Pools the pixels of every readable image under `input`.
pub fn pooled_intensities(input: &Path, exec: Execution) -> Result<(IntensityDistribution, usize)> {
    let inputs = discover_inputs(input)?;
    let parts = exec.map_slice(&inputs, |_, inp| {
        load_image(&inp.path, None).map(|im| IntensityDistribution::from_pixels(im.pixels()))
    });
    let mut pooled = IntensityDistribution::default();
    for p in parts {
        pooled.merge(&p?);
    }
    Ok((pooled, inputs.len()))
}

pub fn cmd_compare(
    a: &Path,
    b: &Path,
    features: Option<(&Path, &Path)>,
    n_quantiles: usize,
    exec: Execution,
) -> Result<ComparisonReport> {
    let (da, na) = pooled_intensities(a, exec)?;
    let (db, nb) = pooled_intensities(b, exec)?;
    let qq = da.qq(&db, n_quantiles)?;
    let (density_a, density_b) = (da.density(), db.density());
    let density_overlap = density_a
        .iter()
        .zip(&density_b)
        .map(|(x, y)| x.min(*y))
        .sum();
    let frechet_distance = match features {
        Some((fa, fb)) => {
            let ra = read_feature_csv(fa)?;
            let rb = read_feature_csv(fb)?;
            match (ra.first(), rb.first()) {
                (Some(x), Some(y)) if x.len() != y.len() => {
                    return Err(Error::FeatureDimension(x.len(), y.len()))
                }
                _ => {}
            }
            Some(frechet_distance(
                &GaussianSummary::from_features(&ra)?,
                &GaussianSummary::from_features(&rb)?,
            )?)
        }
        None => None,
    };
    Ok(ComparisonReport {
        images_a: na,
        images_b: nb,
        max_qq_deviation: max_qq_deviation(&qq),
        qq,
        density_a,
        density_b,
        density_overlap,
        frechet_distance,
    })
}

/// `probability,quantile_a,quantile_b`.
pub fn write_qq_csv(path: impl AsRef<Path>, pairs: &[(f64, f64)]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("probability,quantile_a,quantile_b\n");
    for (p, (a, b)) in probability_grid(pairs.len()).zip(pairs) {
        text.push_str(&format!("{p},{a},{b}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `intensity,ensemble,density`, one row per level and ensemble.
pub fn write_density_csv(path: impl AsRef<Path>, report: &ComparisonReport) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("intensity,ensemble,density\n");
    for (name, d) in [("a", &report.density_a), ("b", &report.density_b)] {
        for (v, p) in d.iter().enumerate() {
            text.push_str(&format!("{v},{name},{p}\n"));
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{cmd_generate, Generators, RunConfig};
    use crate::manifest::SomName;
    use crate::stats::frechet::write_feature_csv;

    #[test]
    fn self_comparison_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig {
            n: 8,
            ..RunConfig::default()
        };
        cmd_generate(
            &config,
            &Generators::default(),
            dir.path(),
            Execution::Parallel,
        )
        .unwrap();
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![i as f64, (i * i % 7) as f64])
            .collect();
        let f = dir.path().join("f.csv");
        write_feature_csv(&f, &rows).unwrap();
        let r = cmd_compare(
            dir.path(),
            dir.path(),
            Some((&f, &f)),
            99,
            Execution::Parallel,
        )
        .unwrap();
        assert!(r.qq.iter().all(|(a, b)| a == b));
        assert_eq!(r.max_qq_deviation, 0.0);
        assert!((r.density_overlap - 1.0).abs() < 1e-12);
        assert!(r.frechet_distance.unwrap().abs() < 1e-6);
        let out = dir.path().join("qq.csv");
        write_qq_csv(&out, &r.qq).unwrap();
        assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 100);
        write_density_csv(&out, &r).unwrap();
        assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 513);
    }

    #[test]
    fn different_soms_are_far_apart() {
        let dir = tempfile::tempdir().unwrap();
        let gens = Generators::default();
        for som in [SomName::Flags, SomName::Alphabet] {
            let c = RunConfig {
                som,
                n: 4,
                ..RunConfig::default()
            };
            cmd_generate(
                &c,
                &gens,
                &dir.path().join(som.as_str()),
                Execution::Parallel,
            )
            .unwrap();
        }
        let r = cmd_compare(
            &dir.path().join("flags"),
            &dir.path().join("alphabet"),
            None,
            99,
            Execution::Parallel,
        )
        .unwrap();
        assert!(r.max_qq_deviation > 50.0, "{}", r.max_qq_deviation);
        assert!(r.frechet_distance.is_none());
    }

    #[test]
    fn feature_dimension_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        crate::raster::save_image(
            &crate::raster::GrayImage::filled(8, 8, 3),
            dir.path().join("a.png"),
        )
        .unwrap();
        let fa = dir.path().join("a.csv");
        let fb = dir.path().join("b.csv");
        write_feature_csv(&fa, &[vec![1.0, 2.0], vec![2.0, 1.0], vec![0.0, 0.5]]).unwrap();
        write_feature_csv(&fb, &[vec![1.0, 2.0, 3.0], vec![2.0, 1.0, 0.0]]).unwrap();
        assert!(matches!(
            cmd_compare(
                dir.path(),
                dir.path(),
                Some((&fa, &fb)),
                9,
                Execution::Sequential
            ),
            Err(Error::FeatureDimension(2, 3))
        ));
    }
}
