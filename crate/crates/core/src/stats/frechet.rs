//! Fréchet (2-Wasserstein) distance between Gaussian summaries of feature sets.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::raster::GrayImage;

const SYMMETRY_TOL: f64 = 1e-9;
const NEGATIVE_EIGEN_TOL: f64 = 1e-8;
const EIGEN_CLAMP: f64 = 1e-10;
const EIGEN_MAX_ITER: usize = 10_000;

/// Mean and covariance of a feature ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub n: usize,
}

impl GaussianSummary {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, n: usize) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::FeatureDimension(d, covariance.nrows()));
        }
        let scale = covariance.amax().max(1.0);
        if (&covariance - covariance.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::InvalidParameter(
                "covariance is not symmetric".into(),
            ));
        }
        let eig = covariance
            .clone()
            .try_symmetric_eigen(f64::EPSILON, EIGEN_MAX_ITER)
            .ok_or(Error::NonConvergence)?;
        if eig
            .eigenvalues
            .iter()
            .any(|&l| l < -NEGATIVE_EIGEN_TOL * scale)
        {
            return Err(Error::InvalidParameter(
                "covariance is not positive semidefinite".into(),
            ));
        }
        Ok(GaussianSummary {
            mean,
            covariance,
            n,
        })
    }

    /// Sample mean and unbiased sample covariance of feature rows.
    pub fn from_features(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::InsufficientData { needed: 2, got: n });
        }
        let d = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::FeatureDimension(d, bad.len()));
        }
        let mut mean = DVector::zeros(d);
        for r in rows {
            mean += DVector::from_column_slice(r);
        }
        mean /= n as f64;
        let mut centered = DMatrix::zeros(n, d);
        for (i, r) in rows.iter().enumerate() {
            for j in 0..d {
                centered[(i, j)] = r[j] - mean[j];
            }
        }
        let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
        cov = (&cov + cov.transpose()) * 0.5;
        GaussianSummary::new(mean, cov, n)
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }
}

/// Symmetric PSD square root via eigendecomposition, clamping tiny eigenvalues.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym
        .try_symmetric_eigen(f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(Error::NonConvergence)?;
    let roots = eig
        .eigenvalues
        .map(|l| if l < EIGEN_CLAMP { 0.0 } else { l.sqrt() });
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`.
///
/// The cross term uses `Tr((S_a^{1/2} S_b S_a^{1/2})^{1/2})`, which equals
/// `Tr((S_a S_b)^{1/2})` and keeps every factorization symmetric.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::FeatureDimension(a.dimension(), b.dimension()));
    }
    let diff = &a.mean - &b.mean;
    let root_a = psd_sqrt(&a.covariance)?;
    let inner = &root_a * &b.covariance * &root_a;
    let eig = ((&inner + inner.transpose()) * 0.5)
        .try_symmetric_eigen(f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(Error::NonConvergence)?;
    let cross: f64 = eig
        .eigenvalues
        .iter()
        .map(|&l| if l < EIGEN_CLAMP { 0.0 } else { l.sqrt() })
        .sum();
    let d = diff.norm_squared() + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Distances between random equal-size splits of the pooled rows, for a
/// permutation null of [`frechet_distance`].
pub fn permutation_null<R: Rng + ?Sized>(
    rows_a: &[Vec<f64>],
    rows_b: &[Vec<f64>],
    permutations: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut pooled: Vec<&Vec<f64>> = rows_a.iter().chain(rows_b).collect();
    let na = rows_a.len();
    let mut out = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        pooled.shuffle(rng);
        let a: Vec<Vec<f64>> = pooled[..na].iter().map(|r| (*r).clone()).collect();
        let b: Vec<Vec<f64>> = pooled[na..].iter().map(|r| (*r).clone()).collect();
        out.push(frechet_distance(
            &GaussianSummary::from_features(&a)?,
            &GaussianSummary::from_features(&b)?,
        )?);
    }
    Ok(out)
}

/// Block-mean descriptor: the image averaged over a `grid x grid` layout.
pub fn block_mean_features(image: &GrayImage, grid: usize) -> Result<Vec<f64>> {
    let tile = image.width() / grid.max(1);
    let tiles = crate::raster::split_tiles(image, tile)?;
    Ok(tiles.tiles().map(|t| t.mean()).collect())
}

/// Reads a numeric CSV matrix, one row per image. A first line that does not
/// parse as numbers is treated as a header.
pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_csv(&text)
}

pub fn parse_feature_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => {
                if let Some(first) = rows.first() {
                    if first.len() != row.len() {
                        return Err(Error::Csv {
                            line: i + 1,
                            message: format!("{} columns, expected {}", row.len(), first.len()),
                        });
                    }
                }
                rows.push(row);
            }
            Err(_) if rows.is_empty() && i == 0 => continue,
            Err(e) => {
                return Err(Error::Csv {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(rows)
}

pub fn write_feature_csv(path: impl AsRef<Path>, rows: &[Vec<f64>]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_stream;
    use proptest::prelude::*;

    fn summary(mean: &[f64], cov: DMatrix<f64>) -> GaussianSummary {
        GaussianSummary::new(DVector::from_column_slice(mean), cov, 100).unwrap()
    }

    fn random_spd(d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_stream(seed, 0);
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.1
    }

    #[test]
    fn identical_summaries_are_zero() {
        let s = summary(&[1.0, -2.0, 3.0], random_spd(3, 1));
        assert!(frechet_distance(&s, &s).unwrap() < 1e-6);
    }

    #[test]
    fn one_dimensional_closed_form() {
        let a = summary(&[1.5], DMatrix::from_element(1, 1, 4.0));
        let b = summary(&[-0.5], DMatrix::from_element(1, 1, 0.25));
        let want = (1.5f64 + 0.5).powi(2) + (2.0f64 - 0.5).powi(2);
        assert!((frechet_distance(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn diagonal_closed_form() {
        let la = [1.0, 9.0, 0.04, 2.5];
        let lb = [4.0, 1.0, 0.09, 2.5];
        let ma = [0.0, 1.0, 2.0, 3.0];
        let mb = [1.0, 1.0, -2.0, 3.5];
        let a = summary(
            &ma,
            DMatrix::from_diagonal(&DVector::from_column_slice(&la)),
        );
        let b = summary(
            &mb,
            DMatrix::from_diagonal(&DVector::from_column_slice(&lb)),
        );
        let want: f64 = (0..4)
            .map(|k| (ma[k] - mb[k]).powi(2) + (la[k].sqrt() - lb[k].sqrt()).powi(2))
            .sum();
        assert!((frechet_distance(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch() {
        let a = summary(&[0.0], DMatrix::identity(1, 1));
        let b = summary(&[0.0, 0.0], DMatrix::identity(2, 2));
        assert!(matches!(
            frechet_distance(&a, &b),
            Err(Error::FeatureDimension(1, 2))
        ));
    }

    #[test]
    fn non_psd_is_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GaussianSummary::new(DVector::zeros(2), cov, 3).is_err());
    }

    #[test]
    fn csv_with_header() {
        let rows = parse_feature_csv("f0,f1\n1,2\n3.5,-4\n").unwrap();
        assert_eq!(rows, vec![vec![1.0, 2.0], vec![3.5, -4.0]]);
        assert!(parse_feature_csv("1,2\n3\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn symmetric_and_triangle(seed in 0u64..10_000) {
            let d = 3;
            let mut rng = rng_stream(seed, 1);
            let mk = |rng: &mut crate::rng::SomRng, s: u64| {
                let m: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                summary(&m, random_spd(d, s))
            };
            let (a, b, c) = (mk(&mut rng, seed * 3), mk(&mut rng, seed * 3 + 1), mk(&mut rng, seed * 3 + 2));
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-8 * ab.max(1.0));
            // The squared distance is W2^2; the triangle inequality holds on its root.
            let (ab, bc, ac) = (ab.sqrt(), frechet_distance(&b, &c).unwrap().sqrt(), frechet_distance(&a, &c).unwrap().sqrt());
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }
}
