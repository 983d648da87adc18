//! Ensemble workflows: generate, calibrate, evaluate and compare.
//!
//! Each workflow is a plain function returning a serializable record; the
//! `somgen` binary is a thin shell around them.

mod calibrate;
mod compare;
mod evaluate;

pub use calibrate::{
    calibrate, calibrate_from_ensemble, load_or_calibrate, Calibration, CalibrationData,
    CALIBRATION_SCHEMA_VERSION,
};
pub use compare::{
    cmd_compare, pooled_intensities, write_density_csv, write_qq_csv, ComparisonReport,
};
pub use evaluate::{
    attach_frechet, cmd_evaluate, discover_inputs, write_autocorrelation_csv, write_rows_csv,
    CalibrationRecord, EnsembleSummary, EvaluationReport, InputImage, ReportRow,
    REPORT_SCHEMA_VERSION,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::alphabet::{arrange_sequence, render_alphabet, AlphabetRules, LetterTemplates};
use crate::clb::{generate_clb, ClbParams};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::flags::{FlagTemplateSet, FlagsGenerator, RandomnessConfig};
use crate::manifest::{EnsembleManifest, ManifestEntry, SomName, MANIFEST_FILE};
use crate::raster::{encode_png, save_image, GrayImage};
use crate::rng::{realization_seed, rng_stream, seeded, LABEL_STREAM};
use crate::voronoi::{generate_voronoi, DetectionConfig, LaplacianConfig, VoronoiParams};

/// Everything a run can be configured with. Loaded from JSON or TOML; every
/// field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub som: SomName,
    /// Ensemble size for `generate`.
    pub n: usize,
    pub seed: u64,
    /// Restrict labels to these classes, uniformly. Exclusive with `class_weights`.
    pub classes: Option<Vec<u8>>,
    /// Relative prevalence of classes 1..=8.
    pub class_weights: Option<Vec<f64>>,
    /// Percentile of the true-ensemble statistic used as the acceptance tolerance.
    pub tolerance_percentile: f64,
    /// Reference ensemble size for `calibrate`; `None` picks a per-SOM default.
    pub calibration_size: Option<usize>,
    pub calibration_seed: u64,
    pub detection: DetectionConfig,
    pub laplacian: LaplacianConfig,
    /// Largest interior zero-crossing density accepted as texture-free.
    pub max_texture_density: f64,
    pub randomness: RandomnessConfig,
    pub qq_quantiles: usize,
    pub autocorrelation_max_lag: usize,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            som: SomName::Flags,
            n: 1000,
            seed: 0,
            classes: None,
            class_weights: None,
            tolerance_percentile: 0.995,
            calibration_size: None,
            calibration_seed: 0x5eed_ca1b,
            detection: DetectionConfig::default(),
            laplacian: LaplacianConfig::default(),
            max_texture_density: 0.01,
            randomness: RandomnessConfig::default(),
            qq_quantiles: 99,
            autocorrelation_max_lag: 16,
            out: None,
            jobs: None,
        }
    }
}

impl RunConfig {
    /// Parses TOML when the path ends in `.toml`, JSON otherwise.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text)
                .map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
        } else {
            Ok(serde_json::from_str(&text)?)
        }
    }

    pub fn execution(&self) -> Execution {
        Execution::with_jobs(self.jobs)
    }

    pub fn calibration_size(&self) -> usize {
        self.calibration_size.unwrap_or(match self.som {
            SomName::Flags => 2000,
            SomName::Voronoi => 400,
            SomName::Alphabet => crate::alphabet::MIN_REFERENCE_SIZE,
            SomName::Clb | SomName::External => 200,
        })
    }

    /// Normalized label weights for classes 1..=k (a single entry for
    /// single-class SOMs).
    pub fn class_weights(&self) -> Result<Vec<f64>> {
        let k = self.som.class_count();
        if k == 1 {
            if self.classes.is_some() || self.class_weights.is_some() {
                return Err(Error::InvalidParameter(format!(
                    "{} has no classes",
                    self.som
                )));
            }
            return Ok(vec![1.0]);
        }
        let weights = match (&self.classes, &self.class_weights) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidParameter(
                    "give either classes or class_weights, not both".into(),
                ))
            }
            (Some(classes), None) => {
                let mut w = vec![0.0; k];
                for &c in classes {
                    if c == 0 || usize::from(c) > k {
                        return Err(Error::InvalidParameter(format!("class {c} not in 1..={k}")));
                    }
                    w[usize::from(c) - 1] = 1.0;
                }
                w
            }
            (None, Some(w)) => w.clone(),
            (None, None) => vec![1.0; k],
        };
        if weights.len() != k {
            return Err(Error::InvalidParameter(format!(
                "{} class weights given, {} expected",
                weights.len(),
                k
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter(
                "class weights must be non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParameter("class weights are all zero".into()));
        }
        Ok(weights.iter().map(|w| w / total).collect())
    }
}

/// Generator state for all SOMs, built once and shared read-only.
#[derive(Clone, Debug)]
pub struct Generators {
    pub flags: FlagsGenerator,
    pub voronoi: VoronoiParams,
    pub alphabet_rules: AlphabetRules,
    pub letters: LetterTemplates,
    pub clb: ClbParams,
}

impl Default for Generators {
    fn default() -> Self {
        Generators {
            flags: FlagsGenerator::new(FlagTemplateSet::builtin())
                .expect("builtin templates are valid"),
            voronoi: VoronoiParams::default(),
            alphabet_rules: AlphabetRules::default(),
            letters: LetterTemplates::builtin(),
            clb: ClbParams::builtin(),
        }
    }
}

impl Generators {
    /// One realization from its recorded seed.
    pub fn realize(&self, som: SomName, class: Option<u32>, seed: u64) -> Result<GrayImage> {
        let mut rng = seeded(seed);
        let class_id = || -> Result<u8> {
            class.and_then(|c| u8::try_from(c).ok()).ok_or_else(|| {
                Error::InvalidParameter(format!("{som} realization needs a class in 1..=8"))
            })
        };
        match som {
            SomName::Flags => self.flags.generate(class_id()?, &mut rng),
            SomName::Voronoi => Ok(generate_voronoi(class_id()?, &self.voronoi, &mut rng)?.0),
            SomName::Alphabet => {
                let seq = arrange_sequence(&self.alphabet_rules, &mut rng)?;
                render_alphabet(&seq, &self.letters)
            }
            SomName::Clb => generate_clb(&self.clb, &mut rng),
            SomName::External => Err(Error::UnknownSom(
                "external images cannot be generated".into(),
            )),
        }
    }

    fn params_record(&self, som: SomName) -> Result<serde_json::Value> {
        Ok(match som {
            SomName::Flags => serde_json::to_value(self.flags.templates())?,
            SomName::Voronoi => serde_json::to_value(&self.voronoi)?,
            SomName::Alphabet => serde_json::to_value(&self.alphabet_rules)?,
            SomName::Clb => serde_json::to_value(&self.clb)?,
            SomName::External => serde_json::Value::Null,
        })
    }
}

/// Image file name of realization `index`.
pub fn realization_file(som: SomName, index: usize) -> String {
    format!("{som}_{index:06}.png")
}

/// Draws class labels and seeds without touching the disk.
pub fn plan_ensemble(config: &RunConfig) -> Result<EnsembleManifest> {
    if config.n == 0 {
        return Err(Error::InvalidParameter(
            "ensemble size must be positive".into(),
        ));
    }
    if config.som == SomName::External {
        return Err(Error::UnknownSom(
            "external images cannot be generated".into(),
        ));
    }
    let weights = config.class_weights()?;
    let mut manifest = EnsembleManifest::new(config.som, config.seed);
    let classed = config.som.class_count() > 1;
    let mut label_rng = rng_stream(config.seed, LABEL_STREAM);
    let picker =
        WeightedIndex::new(&weights).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    for i in 0..config.n {
        manifest.entries.push(ManifestEntry {
            path: realization_file(config.som, i),
            class: classed.then(|| picker.sample(&mut label_rng) as u32 + 1),
            seed: realization_seed(config.seed, i as u64),
        });
    }
    let mut params = BTreeMap::new();
    params.insert("n".to_string(), serde_json::json!(config.n));
    params.insert("class_weights".to_string(), serde_json::json!(weights));
    params.insert(
        "generator".to_string(),
        serde_json::json!(concat!("somgen-core ", env!("CARGO_PKG_VERSION"))),
    );
    manifest.params = params;
    Ok(manifest)
}

/// Writes `n` realizations and `manifest.json` into `out_dir`.
pub fn cmd_generate(
    config: &RunConfig,
    generators: &Generators,
    out_dir: &Path,
    exec: Execution,
) -> Result<EnsembleManifest> {
    let mut manifest = plan_ensemble(config)?;
    manifest.params.insert(
        "som_params".to_string(),
        generators.params_record(config.som)?,
    );
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results = exec.map_slice(&manifest.entries, |_, e| {
        let im = generators.realize(manifest.som_name, e.class, e.seed)?;
        save_image(&im, out_dir.join(&e.path))
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Regenerates every entry from its seed and returns the paths whose files
/// differ byte-for-byte from the fresh PNG encoding.
pub fn verify_manifest(
    manifest: &EnsembleManifest,
    base_dir: &Path,
    generators: &Generators,
    exec: Execution,
) -> Result<Vec<String>> {
    let checks = exec.map_slice(&manifest.entries, |_, e| -> Result<Option<String>> {
        let fresh = encode_png(&generators.realize(manifest.som_name, e.class, e.seed)?)?;
        let path = manifest.resolve(base_dir, e);
        let stored = std::fs::read(&path).map_err(|err| Error::io(&path, err))?;
        Ok((stored != fresh).then(|| e.path.clone()))
    });
    Ok(checks
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_weights_from_subsets() {
        let mut c = RunConfig {
            som: SomName::Voronoi,
            classes: Some(vec![1, 8]),
            ..RunConfig::default()
        };
        let w = c.class_weights().unwrap();
        assert_eq!(w[0], 0.5);
        assert_eq!(w[7], 0.5);
        assert_eq!(w[3], 0.0);
        c.class_weights = Some(vec![1.0; 8]);
        assert!(c.class_weights().is_err());
        c.classes = None;
        c.class_weights = Some(vec![0.0; 8]);
        assert!(c.class_weights().is_err());
        c.class_weights = Some(vec![-1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(c.class_weights().is_err());
        let a = RunConfig {
            som: SomName::Alphabet,
            ..RunConfig::default()
        };
        assert_eq!(a.class_weights().unwrap(), vec![1.0]);
    }

    #[test]
    fn subset_plans_only_use_listed_classes() {
        let c = RunConfig {
            som: SomName::Voronoi,
            classes: Some(vec![1, 8]),
            n: 200,
            seed: 42,
            ..RunConfig::default()
        };
        let m = plan_ensemble(&c).unwrap();
        assert_eq!(m.entries.len(), 200);
        assert!(m
            .entries
            .iter()
            .all(|e| matches!(e.class, Some(1) | Some(8))));
        assert!(m.entries.iter().any(|e| e.class == Some(1)));
        assert!(m.entries.iter().any(|e| e.class == Some(8)));
        assert_eq!(m.entries[3].path, "voronoi_000003.png");
    }

    #[test]
    fn uniform_flags_plan_is_balanced() {
        let c = RunConfig {
            n: 800,
            seed: 1,
            ..RunConfig::default()
        };
        let m = plan_ensemble(&c).unwrap();
        let mut counts = [0usize; 8];
        for e in &m.entries {
            counts[e.class.unwrap() as usize - 1] += 1;
        }
        // 4 binomial standard deviations around 100.
        let sd = (800.0f64 * 0.125 * 0.875).sqrt();
        assert!(
            counts.iter().all(|&n| (n as f64 - 100.0).abs() < 4.0 * sd),
            "{counts:?}"
        );
    }

    #[test]
    fn empty_ensemble_is_rejected() {
        let c = RunConfig {
            n: 0,
            ..RunConfig::default()
        };
        assert!(plan_ensemble(&c).is_err());
    }

    #[test]
    fn toml_and_json_configs_parse() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("run.toml");
        std::fs::write(&t, "som = \"voronoi\"\nn = 12\nclasses = [3]\n[detection]\nsigma_h = 1.5\nthreshold = { kind = \"absolute\", value = 2.0 }\nerosion_radius = 1\nmin_region_area = 12\nmerge_tolerance = 1.0\n").unwrap();
        let c = RunConfig::load(&t).unwrap();
        assert_eq!(
            (c.som, c.n, c.detection.sigma_h),
            (SomName::Voronoi, 12, 1.5)
        );
        let j = dir.path().join("run.json");
        std::fs::write(&j, r#"{"som": "alphabet", "seed": 9}"#).unwrap();
        let c = RunConfig::load(&j).unwrap();
        assert_eq!((c.som, c.seed, c.n), (SomName::Alphabet, 9, 1000));
        std::fs::write(&j, r#"{"bogus": 1}"#).unwrap();
        assert!(RunConfig::load(&j).is_err());
    }

    #[test]
    fn generate_then_verify() {
        let dir = tempfile::tempdir().unwrap();
        let gens = Generators::default();
        for som in [
            SomName::Flags,
            SomName::Alphabet,
            SomName::Voronoi,
            SomName::Clb,
        ] {
            let out = dir.path().join(som.as_str());
            let c = RunConfig {
                som,
                n: 3,
                seed: 5,
                ..RunConfig::default()
            };
            let m = cmd_generate(&c, &gens, &out, Execution::Parallel).unwrap();
            let loaded = EnsembleManifest::load(out.join(MANIFEST_FILE)).unwrap();
            assert_eq!(loaded, m);
            assert!(verify_manifest(&m, &out, &gens, Execution::Sequential)
                .unwrap()
                .is_empty());
        }
        let out = dir.path().join("flags");
        let m = EnsembleManifest::load(out.join(MANIFEST_FILE)).unwrap();
        let victim = out.join(&m.entries[1].path);
        let mut im = crate::raster::load_image(&victim, None).unwrap();
        let v = im.get(0, 0);
        im.set(0, 0, v.wrapping_add(1));
        save_image(&im, &victim).unwrap();
        assert_eq!(
            verify_manifest(&m, &out, &gens, Execution::Sequential).unwrap(),
            vec![m.entries[1].path.clone()]
        );
    }
}
