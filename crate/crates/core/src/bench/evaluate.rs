//! Per-realization validation and ensemble summaries.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alphabet::{
    classify_letters, frequency_test, hz_distribution, pair_prevalence, positional_error_map,
    HzSummary, Letter, LetterSequence, PositionalMap, MAX_EXCLUDED, MIN_REFERENCE_SIZE,
};
use crate::clb::{radial_autocorrelation_images, MIN_AUTOCORRELATION_REALIZATIONS};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::flags::{
    class_prevalence, classify_flags, mixture_distribution, validate_intensities,
    validate_randomness, ClassPrevalence, IntensityModel,
};
use crate::manifest::{EnsembleManifest, SomName, MANIFEST_FILE};
use crate::raster::{load_image, GrayImage, SOM_SIZE};
use crate::stats::frechet::{frechet_distance, read_feature_csv, GaussianSummary};
use crate::stats::mean_std;
use crate::stats::qq::{max_qq_deviation, IntensityDistribution};
use crate::voronoi::{
    class_from_count, detect_regions, laplacian_zero_crossings_with, prevalence_row, PrevalenceRow,
    CLASS_COUNT,
};

use super::calibrate::{Calibration, CalibrationData};
use super::{Generators, RunConfig};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One image to evaluate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputImage {
    pub id: String,
    pub path: PathBuf,
    pub label: Option<u32>,
}

/// Resolves a manifest file, a directory holding `manifest.json`, or a bare
/// directory of PNG files into a list sorted by id.
pub fn discover_inputs(path: &Path) -> Result<Vec<InputImage>> {
    let manifest_path = if path.is_file() {
        Some(path.to_path_buf())
    } else if path.join(MANIFEST_FILE).is_file() {
        Some(path.join(MANIFEST_FILE))
    } else {
        None
    };
    let mut inputs = match manifest_path {
        Some(mp) => {
            let manifest = EnsembleManifest::load(&mp)?;
            let base = mp.parent().unwrap_or(Path::new("."));
            manifest
                .entries
                .iter()
                .map(|e| InputImage {
                    id: e.path.clone(),
                    path: manifest.resolve(base, e),
                    label: e.class,
                })
                .collect::<Vec<_>>()
        }
        None => {
            let listing = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
            let mut found = Vec::new();
            for entry in listing {
                let p = entry.map_err(|e| Error::io(path, e))?.path();
                if p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
                    let id = p
                        .file_name()
                        .unwrap_or_default()
                        .to_string_lossy()
                        .into_owned();
                    found.push(InputImage {
                        id,
                        path: p,
                        label: None,
                    });
                }
            }
            found
        }
    };
    if inputs.is_empty() {
        return Err(Error::EmptyInput("no images found"));
    }
    inputs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(inputs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_label: Option<u32>,
    pub class_recovered: Option<u32>,
    pub statistics: BTreeMap<String, f64>,
    pub passes: BTreeMap<String, bool>,
    /// Why the realization was left out of the ensemble statistics.
    pub exclusion: Option<String>,
    /// Recovered letters, alphabet only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovered: Option<String>,
}

impl ReportRow {
    fn new(input: &InputImage) -> Self {
        ReportRow {
            id: input.id.clone(),
            class_label: input.label,
            class_recovered: None,
            statistics: BTreeMap::new(),
            passes: BTreeMap::new(),
            exclusion: None,
            recovered: None,
        }
    }

    fn stat(&mut self, name: &str, v: f64) {
        self.statistics.insert(name.to_string(), v);
    }

    fn pass(&mut self, name: &str, v: bool) {
        self.passes.insert(name.to_string(), v);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub config_hash: String,
    pub reference_size: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub total: usize,
    pub evaluated: usize,
    pub excluded: usize,
    /// Per test: rows that ran it and rows that passed.
    pub tested: BTreeMap<String, usize>,
    pub passed: BTreeMap<String, usize>,
    pub pass_rates: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_prevalence: Option<ClassPrevalence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prevalence_table: Option<PrevalenceRow>,
    /// `(candidate, reference)` pooled-intensity quantile pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qq: Option<Vec<(f64, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_qq_deviation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_area_shade_rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hz: Option<HzSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positional_map: Option<PositionalMap>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positional_hot_cells: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub autocorrelation: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_autocorrelation: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frechet_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub som_name: SomName,
    pub calibration: CalibrationRecord,
    pub rows: Vec<ReportRow>,
    pub summary: EnsembleSummary,
    /// Wall-clock annotation, kept apart so the rest stays reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// What a row evaluation hands back besides the row itself.
#[derive(Default)]
struct RowExtras {
    pixels: Option<IntensityDistribution>,
    sequence: Option<LetterSequence>,
    rho: Option<f64>,
    region_count: Option<usize>,
    image: Option<GrayImage>,
}

/// Runs the SOM-specific pipeline over every input image.
pub fn cmd_evaluate(
    input: &Path,
    som: SomName,
    calibration: &Calibration,
    config: &RunConfig,
    generators: &Generators,
    exec: Execution,
) -> Result<EvaluationReport> {
    if som == SomName::External {
        return Err(Error::UnknownSom(
            "external (pick the SOM whose rules apply)".into(),
        ));
    }
    if calibration.som_name != som {
        return Err(Error::MissingCalibration(format!(
            "calibration is for {}, not {som}",
            calibration.som_name
        )));
    }
    let inputs = discover_inputs(input)?;
    let model = IntensityModel::flags();
    let evaluated = exec.map_slice(&inputs, |_, inp| -> Result<(ReportRow, RowExtras)> {
        let mut row = ReportRow::new(inp);
        let image = match load_image(&inp.path, Some((SOM_SIZE, SOM_SIZE))) {
            Ok(im) => im,
            Err(e) => {
                row.exclusion = Some(format!("unreadable: {e}"));
                return Ok((row, RowExtras::default()));
            }
        };
        let extras = evaluate_row(
            &mut row,
            image,
            som,
            calibration,
            config,
            generators,
            &model,
        )?;
        Ok((row, extras))
    });
    let mut rows = Vec::with_capacity(inputs.len());
    let mut extras = Vec::with_capacity(inputs.len());
    for r in evaluated {
        let (row, ex) = r?;
        rows.push(row);
        extras.push(ex);
    }
    let summary = summarize(som, &rows, extras, calibration, generators)?;
    Ok(EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        som_name: som,
        calibration: CalibrationRecord {
            config_hash: calibration.config_hash.clone(),
            reference_size: calibration.reference_size,
        },
        rows,
        summary,
        timestamp: None,
    })
}

fn evaluate_row(
    row: &mut ReportRow,
    image: GrayImage,
    som: SomName,
    calibration: &Calibration,
    config: &RunConfig,
    generators: &Generators,
    model: &IntensityModel,
) -> Result<RowExtras> {
    let mut extras = RowExtras::default();
    match (&calibration.data, som) {
        (
            CalibrationData::Flags {
                tolerances,
                randomness,
            },
            SomName::Flags,
        ) => {
            let templates = generators.flags.templates();
            let rec = classify_flags(&image, templates)?;
            row.class_recovered = Some(u32::from(rec.class_id));
            row.stat("template_mae", rec.template_mae);
            let never = templates.never_foreground();
            let forbidden = rec
                .recovered_foreground
                .cells()
                .iter()
                .zip(never.cells())
                .filter(|&(&f, &n)| f && n)
                .count();
            row.stat("forbidden_foreground", forbidden as f64);
            row.pass("perfect_match", rec.perfect_match);
            if !rec.perfect_match {
                row.exclusion = Some("imperfect template match".into());
                return Ok(extras);
            }
            let check = validate_intensities(model, &image, &rec, Some(tolerances))?;
            row.stat("fg_chi2", check.fg_chi2);
            row.stat("bg_chi2", check.bg_chi2);
            row.pass("fg_intensity", check.fg_pass);
            row.pass("bg_intensity", check.bg_pass);
            let rnd = validate_randomness(&image, &rec, randomness)?;
            row.stat("violating_tiles", rnd.violating_tiles as f64);
            row.stat("degenerate_tiles", rnd.degenerate_tiles as f64);
            row.pass("randomness", rnd.pass);
            extras.pixels = Some(IntensityDistribution::from_pixels(image.pixels()));
        }
        (
            CalibrationData::Voronoi {
                bins, detection, ..
            },
            SomName::Voronoi,
        ) => {
            let regions = detect_regions(&image, detection);
            let count = regions.region_count();
            row.stat("region_count", count as f64);
            row.class_recovered = Some(u32::from(class_from_count(count, Some(bins))?));
            extras.region_count = Some(count);
            if let Ok(rho) = regions.area_shade_rho() {
                row.stat("area_shade_rho", rho);
                extras.rho = Some(rho);
            }
            let zc = laplacian_zero_crossings_with(&image, &regions, &config.laplacian);
            row.stat("interior_zero_crossing_density", zc.interior_density);
            row.pass(
                "texture_free",
                zc.interior_density < config.max_texture_density,
            );
        }
        (CalibrationData::Alphabet { .. }, SomName::Alphabet) => {
            let seq = classify_letters(&image, &generators.letters)?;
            let excluded = seq.excluded_count();
            row.stat("excluded_tokens", excluded as f64);
            row.recovered = Some(seq.to_string());
            if excluded >= MAX_EXCLUDED {
                row.exclusion = Some(format!("{excluded} uncertain letters"));
                return Ok(extras);
            }
            let rules = &generators.alphabet_rules;
            let f = frequency_test(&seq, rules)?;
            row.stat("frequency_chi2", f.chi2);
            row.pass("exact_frequencies", f.exact_match);
            let p = pair_prevalence(&seq);
            for (name, v) in [
                ("hv", p.hv),
                ("wy", p.wy),
                ("hz_unordered", p.hz_unordered),
                ("lone_v", p.lone_v),
                ("lone_y", p.lone_y),
            ] {
                row.stat(name, v as f64);
            }
            // Only H-V and W-Y adjacencies are counted; other ordered rules are not checked.
            let ordered_ok = rules.ordered_pairs.iter().all(|&(a, b, n)| match (a, b) {
                (Letter::H, Letter::V) => p.hv == n,
                (Letter::W, Letter::Y) => p.wy == n,
                _ => true,
            }) && p.lone_v == 0
                && p.lone_y == 0;
            row.pass("ordered_pairs", ordered_ok);
            row.pass("unordered_pairs", p.hz_unordered >= rules.unordered_pair.2);
            extras.sequence = Some(seq);
        }
        (CalibrationData::Clb { .. }, SomName::Clb) => {
            let values = image.to_f64();
            let (mean, std) = mean_std(&values).expect("non-empty image");
            row.stat("mean", mean);
            row.stat("std_dev", std);
            extras.pixels = Some(IntensityDistribution::from_pixels(image.pixels()));
            extras.image = Some(image);
        }
        _ => {
            return Err(Error::MissingCalibration(format!(
                "calibration data does not fit {som}"
            )));
        }
    }
    Ok(extras)
}

fn summarize(
    som: SomName,
    rows: &[ReportRow],
    extras: Vec<RowExtras>,
    calibration: &Calibration,
    generators: &Generators,
) -> Result<EnsembleSummary> {
    let mut s = EnsembleSummary {
        total: rows.len(),
        excluded: rows.iter().filter(|r| r.exclusion.is_some()).count(),
        ..EnsembleSummary::default()
    };
    s.evaluated = s.total - s.excluded;
    for r in rows.iter().filter(|r| r.exclusion.is_none()) {
        for (name, &ok) in &r.passes {
            *s.tested.entry(name.clone()).or_default() += 1;
            *s.passed.entry(name.clone()).or_default() += usize::from(ok);
        }
    }
    s.pass_rates = s
        .tested
        .iter()
        .map(|(k, &n)| {
            (
                k.clone(),
                s.passed.get(k).copied().unwrap_or(0) as f64 / n as f64,
            )
        })
        .collect();

    let mut pooled = IntensityDistribution::default();
    for e in &extras {
        if let Some(p) = &e.pixels {
            pooled.merge(p);
        }
    }
    let mut qq_against = |reference: &IntensityDistribution| -> Result<()> {
        if !pooled.is_empty() {
            let pairs = pooled.qq(reference, 99)?;
            s.max_qq_deviation = Some(max_qq_deviation(&pairs));
            s.qq = Some(pairs);
        }
        Ok(())
    };
    match (&calibration.data, som) {
        (CalibrationData::Flags { .. }, _) => {
            qq_against(&mixture_distribution())?;
            let labels: Vec<u8> = rows
                .iter()
                .filter_map(|r| r.class_recovered.map(|c| c as u8))
                .collect();
            if !labels.is_empty() {
                s.class_prevalence = Some(class_prevalence(&labels, crate::flags::CLASS_COUNT)?);
            }
        }
        (
            CalibrationData::Clb {
                intensity,
                autocorrelation,
            },
            _,
        ) => {
            qq_against(intensity)?;
            let images: Vec<GrayImage> = extras.into_iter().filter_map(|e| e.image).collect();
            if images.len() >= MIN_AUTOCORRELATION_REALIZATIONS {
                s.autocorrelation = Some(radial_autocorrelation_images(
                    &images,
                    autocorrelation.len() - 1,
                )?);
            }
            s.reference_autocorrelation = Some(autocorrelation.clone());
        }
        (CalibrationData::Voronoi { bins, .. }, _) => {
            let rhos: Vec<f64> = extras.iter().filter_map(|e| e.rho).collect();
            s.mean_area_shade_rho = mean_std(&rhos).map(|(m, _)| m);
            let counts: Vec<Result<usize>> = rows
                .iter()
                .zip(&extras)
                .map(|(r, e)| {
                    e.region_count.ok_or_else(|| {
                        Error::Undefined(if r.exclusion.is_some() {
                            "excluded"
                        } else {
                            "no count"
                        })
                    })
                })
                .collect();
            let mut training: Vec<u8> = rows
                .iter()
                .filter_map(|r| r.class_label.map(|c| c as u8))
                .collect();
            if training.is_empty() {
                training = (1..=CLASS_COUNT).collect();
            }
            s.prevalence_table = Some(prevalence_row(&training, &counts, bins)?);
        }
        (CalibrationData::Alphabet { reference }, _) => {
            let seqs: Vec<LetterSequence> = extras.into_iter().filter_map(|e| e.sequence).collect();
            if !seqs.is_empty() {
                s.hz = Some(hz_distribution(&seqs, &generators.alphabet_rules)?);
                let map = positional_error_map(&seqs, reference, MIN_REFERENCE_SIZE)?;
                s.positional_hot_cells = Some(map.exceedances(0.99).iter().filter(|&&h| h).count());
                s.positional_map = Some(map);
            }
        }
    }
    Ok(s)
}

/// Adds the Fréchet distance between two per-image feature files.
pub fn attach_frechet(
    report: &mut EvaluationReport,
    candidate: &Path,
    reference: &Path,
) -> Result<f64> {
    let a = GaussianSummary::from_features(&read_feature_csv(candidate)?)?;
    let b = GaussianSummary::from_features(&read_feature_csv(reference)?)?;
    let d = frechet_distance(&a, &b)?;
    report.summary.frechet_distance = Some(d);
    Ok(d)
}

/// Tidy per-row table: `id,kind,name,value` with kind `statistic` or `pass`.
pub fn write_rows_csv(path: impl AsRef<Path>, report: &EvaluationReport) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("id,kind,name,value\n");
    for r in &report.rows {
        for (k, v) in &r.statistics {
            text.push_str(&format!("{},statistic,{k},{v}\n", r.id));
        }
        for (k, v) in &r.passes {
            text.push_str(&format!("{},pass,{k},{}\n", r.id, u8::from(*v)));
        }
        if let Some(c) = r.class_recovered {
            text.push_str(&format!("{},statistic,class_recovered,{c}\n", r.id));
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `lag,series,correlation` rows for the candidate and reference curves.
pub fn write_autocorrelation_csv(path: impl AsRef<Path>, summary: &EnsembleSummary) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("lag,series,correlation\n");
    for (name, curve) in [
        ("candidate", &summary.autocorrelation),
        ("reference", &summary.reference_autocorrelation),
    ] {
        if let Some(c) = curve {
            for (lag, v) in c.iter().enumerate() {
                text.push_str(&format!("{lag},{name},{v}\n"));
            }
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
