//! Reference-ensemble calibration, cached on disk by config hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alphabet::{classify_letters, PositionalReference};
use crate::clb::radial_autocorrelation_images;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::flags::{classify_flags, IntensityModel, IntensityTolerances, RandomnessConfig};
use crate::manifest::SomName;
use crate::raster::{load_image, GrayImage, SOM_SIZE};
use crate::rng::realization_seed;
use crate::stats::calibration::calibrate_tolerance;
use crate::stats::qq::IntensityDistribution;
use crate::voronoi::{
    calibrate_bins, class_from_count, detect_regions, ClassBins, DetectionConfig, CLASS_COUNT,
};

use super::evaluate::discover_inputs;
use super::{Generators, RunConfig};

pub const CALIBRATION_SCHEMA_VERSION: u32 = 1;

/// SOM-specific reference quantities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibrationData {
    Flags {
        tolerances: IntensityTolerances,
        randomness: RandomnessConfig,
    },
    Voronoi {
        bins: ClassBins,
        detection: DetectionConfig,
        /// `confusion[t][k]`: fraction of reference class `t + 1` assigned to class `k + 1`.
        confusion: Vec<Vec<f64>>,
        per_class: Vec<usize>,
    },
    Alphabet {
        reference: PositionalReference,
    },
    Clb {
        intensity: IntensityDistribution,
        autocorrelation: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub schema_version: u32,
    pub som_name: SomName,
    /// SHA-256 of the settings that determine the calibration.
    pub config_hash: String,
    pub reference_size: usize,
    pub data: CalibrationData,
}

#[derive(Serialize)]
struct CalibrationKey<'a> {
    schema_version: u32,
    generator: &'static str,
    som: SomName,
    size: usize,
    seed: u64,
    tolerance_percentile: f64,
    detection: &'a DetectionConfig,
    randomness: &'a RandomnessConfig,
    autocorrelation_max_lag: usize,
}

impl Calibration {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Calibration = serde_json::from_str(&text)?;
        if c.schema_version != CALIBRATION_SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "calibration schema version {} (supported: {CALIBRATION_SCHEMA_VERSION})",
                c.schema_version
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 of the calibration-relevant part of `config`.
    pub fn config_hash(config: &RunConfig) -> String {
        let key = CalibrationKey {
            schema_version: CALIBRATION_SCHEMA_VERSION,
            generator: concat!("somgen-core ", env!("CARGO_PKG_VERSION")),
            som: config.som,
            size: config.calibration_size(),
            seed: config.calibration_seed,
            tolerance_percentile: config.tolerance_percentile,
            detection: &config.detection,
            randomness: &config.randomness,
            autocorrelation_max_lag: config.autocorrelation_max_lag,
        };
        let bytes = serde_json::to_vec(&key).expect("key serializes");
        Sha256::digest(bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Cache file name for `config` inside a calibration directory.
    pub fn cache_path(dir: &Path, config: &RunConfig) -> PathBuf {
        let hash = Self::config_hash(config);
        dir.join(format!("calibration_{}_{}.json", config.som, &hash[..16]))
    }
}

/// Builds the calibration for `config.som` from a fresh true ensemble.
pub fn calibrate(
    config: &RunConfig,
    generators: &Generators,
    exec: Execution,
) -> Result<Calibration> {
    let size = config.calibration_size();
    let seed = config.calibration_seed;
    let classes = usize::from(CLASS_COUNT);
    let classed = config.som.class_count() > 1;
    calibrate_with(config, generators, exec, size, |i| {
        let class = classed.then_some((i % classes) as u32 + 1);
        let image = generators.realize(config.som, class, realization_seed(seed, i as u64))?;
        Ok((image, class))
    })
}

/// Builds the calibration from an existing true ensemble (a manifest or a
/// directory). Voronoi needs class labels, so it requires a manifest.
pub fn calibrate_from_ensemble(
    input: &Path,
    config: &RunConfig,
    generators: &Generators,
    exec: Execution,
) -> Result<Calibration> {
    let inputs = discover_inputs(input)?;
    let mut cal = calibrate_with(config, generators, exec, inputs.len(), |i| {
        Ok((
            load_image(&inputs[i].path, Some((SOM_SIZE, SOM_SIZE)))?,
            inputs[i].label,
        ))
    })?;
    // Key on the reference images too, so it never collides with a generated calibration.
    let mut h = Sha256::new();
    h.update(cal.config_hash.as_bytes());
    for inp in &inputs {
        h.update(inp.id.as_bytes());
        h.update([0]);
    }
    cal.config_hash = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(cal)
}

fn calibrate_with<F>(
    config: &RunConfig,
    generators: &Generators,
    exec: Execution,
    size: usize,
    source: F,
) -> Result<Calibration>
where
    F: Fn(usize) -> Result<(GrayImage, Option<u32>)> + Sync + Send,
{
    if size == 0 {
        return Err(Error::InvalidParameter(
            "calibration size must be positive".into(),
        ));
    }
    let data = match config.som {
        SomName::Flags => {
            let model = IntensityModel::flags();
            let templates = generators.flags.templates();
            let stats = exec
                .map(size, |i| -> Result<(f64, f64)> {
                    let (im, _) = source(i)?;
                    let rec = classify_flags(&im, templates)?;
                    model.statistics(&im, &rec)
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let fg: Vec<f64> = stats.iter().map(|s| s.0).collect();
            let bg: Vec<f64> = stats.iter().map(|s| s.1).collect();
            CalibrationData::Flags {
                tolerances: IntensityTolerances {
                    foreground: calibrate_tolerance("fg_chi2", &fg, config.tolerance_percentile)?,
                    background: calibrate_tolerance("bg_chi2", &bg, config.tolerance_percentile)?,
                },
                randomness: config.randomness,
            }
        }
        SomName::Voronoi => {
            let samples = exec
                .map(size, |i| -> Result<(u8, usize)> {
                    let (im, class) = source(i)?;
                    let class = class.and_then(|c| u8::try_from(c).ok()).ok_or_else(|| {
                        Error::MissingCalibration("voronoi calibration needs class labels".into())
                    })?;
                    Ok((class, detect_regions(&im, &config.detection).region_count()))
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let bins = calibrate_bins(&samples)?;
            let k = usize::from(CLASS_COUNT);
            let mut tally = vec![vec![0usize; k]; k];
            for &(c, n) in &samples {
                tally[usize::from(c) - 1][usize::from(class_from_count(n, Some(&bins))?) - 1] += 1;
            }
            let per_class: Vec<usize> = tally.iter().map(|r| r.iter().sum()).collect();
            let confusion = tally
                .iter()
                .zip(&per_class)
                .map(|(row, &n)| row.iter().map(|&t| t as f64 / n as f64).collect())
                .collect();
            CalibrationData::Voronoi {
                bins,
                detection: config.detection.clone(),
                confusion,
                per_class,
            }
        }
        SomName::Alphabet => {
            let sequences = exec
                .map(size, |i| {
                    classify_letters(&source(i)?.0, &generators.letters)
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            CalibrationData::Alphabet {
                reference: PositionalReference::from_sequences(&sequences),
            }
        }
        SomName::Clb => {
            let images = exec
                .map(size, |i| source(i).map(|(im, _)| im))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let mut intensity = IntensityDistribution::default();
            for im in &images {
                intensity.add_pixels(im.pixels());
            }
            CalibrationData::Clb {
                intensity,
                autocorrelation: radial_autocorrelation_images(
                    &images,
                    config.autocorrelation_max_lag,
                )?,
            }
        }
        SomName::External => return Err(Error::UnknownSom("external".into())),
    };
    Ok(Calibration {
        schema_version: CALIBRATION_SCHEMA_VERSION,
        som_name: config.som,
        config_hash: Calibration::config_hash(config),
        reference_size: size,
        data,
    })
}

/// Loads the cached calibration for `config` from `dir`, computing and
/// storing it first if absent or stale.
pub fn load_or_calibrate(
    dir: &Path,
    config: &RunConfig,
    generators: &Generators,
    exec: Execution,
) -> Result<Calibration> {
    let path = Calibration::cache_path(dir, config);
    if path.exists() {
        let cached = Calibration::load(&path)?;
        if cached.config_hash == Calibration::config_hash(config) {
            return Ok(cached);
        }
    }
    let fresh = calibrate(config, generators, exec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fresh.save(&path)?;
    Ok(fresh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_relevant_settings_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.n = 7;
        b.out = Some("elsewhere".into());
        assert_eq!(Calibration::config_hash(&a), Calibration::config_hash(&b));
        b.tolerance_percentile = 0.99;
        assert_ne!(Calibration::config_hash(&a), Calibration::config_hash(&b));
        assert_eq!(Calibration::config_hash(&a).len(), 64);
    }

    #[test]
    fn cached_calibration_is_reused() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig {
            som: SomName::Flags,
            calibration_size: Some(40),
            ..RunConfig::default()
        };
        let gens = Generators::default();
        let first = load_or_calibrate(dir.path(), &config, &gens, Execution::Parallel).unwrap();
        let path = Calibration::cache_path(dir.path(), &config);
        assert!(path.exists());
        let again = load_or_calibrate(dir.path(), &config, &gens, Execution::Sequential).unwrap();
        assert_eq!(first, again);
        match &first.data {
            CalibrationData::Flags { tolerances, .. } => {
                assert_eq!(tolerances.foreground.calibration_size, 40);
                assert!(tolerances.foreground.threshold > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn calibration_from_a_stored_ensemble() {
        let dir = tempfile::tempdir().unwrap();
        let gens = Generators::default();
        let config = RunConfig {
            som: SomName::Flags,
            n: 30,
            ..RunConfig::default()
        };
        crate::bench::cmd_generate(&config, &gens, dir.path(), Execution::Parallel).unwrap();
        let cal = calibrate_from_ensemble(dir.path(), &config, &gens, Execution::Parallel).unwrap();
        assert_eq!(cal.reference_size, 30);
        assert_ne!(cal.config_hash, Calibration::config_hash(&config));
        let unlabeled = tempfile::tempdir().unwrap();
        let im = gens.realize(SomName::Voronoi, Some(1), 1).unwrap();
        crate::raster::save_image(&im, unlabeled.path().join("a.png")).unwrap();
        let v = RunConfig {
            som: SomName::Voronoi,
            ..RunConfig::default()
        };
        assert!(matches!(
            calibrate_from_ensemble(unlabeled.path(), &v, &gens, Execution::Sequential),
            Err(Error::MissingCalibration(_))
        ));
    }
}
