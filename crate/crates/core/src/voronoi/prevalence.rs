//! Region-count classes and per-class prevalence rows.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::manifest::EnsembleManifest;
use crate::raster::{load_image, SOM_SIZE};

use super::detect::{detect_regions, DetectionConfig};
use super::CLASS_COUNT;

/// Upper edges of classes 1..=7; class `k` holds counts in
/// `(upper[k-2], upper[k-1]]`, class 8 everything above the last edge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBins {
    pub upper_edges: Vec<usize>,
}

impl Default for ClassBins {
    /// `(12 (k-1), 12 k]`: a realization of class `k` maps back to `k` unless
    /// detection over-counts.
    fn default() -> Self {
        ClassBins {
            upper_edges: (1..usize::from(CLASS_COUNT)).map(|k| 12 * k).collect(),
        }
    }
}

impl ClassBins {
    pub fn validate(&self) -> Result<()> {
        if self.upper_edges.len() != usize::from(CLASS_COUNT) - 1
            || self.upper_edges.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidParameter(format!(
                "class bins need 7 strictly increasing edges, got {:?}",
                self.upper_edges
            )));
        }
        Ok(())
    }
}

/// Class of the bin containing `count`; a count equal to an edge takes the
/// lower class.
pub fn class_from_count(count: usize, bins: Option<&ClassBins>) -> Result<u8> {
    let bins = bins.ok_or_else(|| Error::MissingCalibration("voronoi class bins".into()))?;
    bins.validate()?;
    Ok(bins.upper_edges.partition_point(|&e| e < count) as u8 + 1)
}

/// Chooses each edge between neighboring classes to minimize the number of
/// misassigned reference realizations. `samples` pairs a true class with its
/// detected region count. Among equally good edges the middle one is taken.
pub fn calibrate_bins(samples: &[(u8, usize)]) -> Result<ClassBins> {
    let classes = usize::from(CLASS_COUNT);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for &(c, n) in samples {
        let k = usize::from(c)
            .checked_sub(1)
            .filter(|&k| k < classes)
            .ok_or_else(|| Error::InvalidParameter(format!("voronoi class {c} not in 1..=8")))?;
        per_class[k].push(n);
    }
    if let Some(k) = per_class.iter().position(|v| v.is_empty()) {
        return Err(Error::InvalidParameter(format!(
            "no reference realizations for class {}",
            k + 1
        )));
    }
    let mut edges = Vec::with_capacity(classes - 1);
    let mut floor = 0usize;
    for k in 0..classes - 1 {
        let (lo, hi) = (&per_class[k], &per_class[k + 1]);
        let max = lo.iter().chain(hi).copied().max().unwrap_or(0) + 1;
        let errors = |t: usize| {
            lo.iter().filter(|&&n| n > t).count() + hi.iter().filter(|&&n| n <= t).count()
        };
        let best = (floor..=max.max(floor)).map(errors).min().unwrap_or(0);
        let optimal: Vec<usize> = (floor..=max.max(floor))
            .filter(|&t| errors(t) == best)
            .collect();
        let t = optimal[(optimal.len() - 1) / 2];
        edges.push(t);
        floor = t + 1;
    }
    let bins = ClassBins { upper_edges: edges };
    bins.validate()?;
    Ok(bins)
}

/// One row of a class-prevalence table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceRow {
    pub training_classes: Vec<u8>,
    pub evaluated: usize,
    pub failures: usize,
    /// Percent of evaluated realizations assigned to each class 1..=8.
    pub prevalence: Vec<f64>,
}

impl PrevalenceRow {
    /// Percent assigned to classes outside the training subset.
    pub fn leakage(&self) -> f64 {
        self.prevalence
            .iter()
            .enumerate()
            .filter(|(k, _)| !self.training_classes.contains(&(*k as u8 + 1)))
            .map(|(_, p)| p)
            .sum()
    }
}

/// Builds a row from per-realization region counts; `Err` entries are
/// tallied as failures.
pub fn prevalence_row(
    training_classes: &[u8],
    counts: &[Result<usize>],
    bins: &ClassBins,
) -> Result<PrevalenceRow> {
    let mut tally = vec![0usize; usize::from(CLASS_COUNT)];
    let mut failures = 0;
    for c in counts {
        match c {
            Ok(n) => tally[usize::from(class_from_count(*n, Some(bins))?) - 1] += 1,
            Err(_) => failures += 1,
        }
    }
    let evaluated = counts.len() - failures;
    let prevalence = tally
        .iter()
        .map(|&t| {
            if evaluated == 0 {
                0.0
            } else {
                100.0 * t as f64 / evaluated as f64
            }
        })
        .collect();
    let mut training_classes = training_classes.to_vec();
    training_classes.sort_unstable();
    training_classes.dedup();
    Ok(PrevalenceRow {
        training_classes,
        evaluated,
        failures,
        prevalence,
    })
}

/// Detects regions in every image of a manifest and tabulates the classes.
pub fn prevalence_experiment(
    training_classes: &[u8],
    manifest: &EnsembleManifest,
    base_dir: &Path,
    bins: Option<&ClassBins>,
    detection: &DetectionConfig,
    exec: Execution,
) -> Result<PrevalenceRow> {
    let bins = bins.ok_or_else(|| Error::MissingCalibration("voronoi class bins".into()))?;
    let counts = exec.map(manifest.entries.len(), |i| {
        let path = manifest.resolve(base_dir, &manifest.entries[i]);
        load_image(&path, Some((SOM_SIZE, SOM_SIZE)))
            .map(|im| detect_regions(&im, detection).region_count())
    });
    prevalence_row(training_classes, &counts, bins)
}

/// Writes rows as CSV with one `class_k` percentage column per class.
pub fn write_prevalence_csv(path: impl AsRef<Path>, rows: &[PrevalenceRow]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("training_classes,evaluated,failures");
    for k in 1..=CLASS_COUNT {
        text.push_str(&format!(",class_{k}"));
    }
    text.push('\n');
    for r in rows {
        let classes: Vec<String> = r.training_classes.iter().map(|c| c.to_string()).collect();
        text.push_str(&format!(
            "{},{},{}",
            classes.join(";"),
            r.evaluated,
            r.failures
        ));
        for p in &r.prevalence {
            text.push_str(&format!(",{p:.3}"));
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bins() {
        let b = ClassBins::default();
        assert_eq!(class_from_count(12, Some(&b)).unwrap(), 1);
        assert_eq!(class_from_count(90, Some(&b)).unwrap(), 8);
        assert_eq!(class_from_count(24, Some(&b)).unwrap(), 2);
        assert_eq!(class_from_count(25, Some(&b)).unwrap(), 3);
        assert_eq!(class_from_count(0, Some(&b)).unwrap(), 1);
        assert_eq!(class_from_count(500, Some(&b)).unwrap(), 8);
        assert!(matches!(
            class_from_count(5, None),
            Err(Error::MissingCalibration(_))
        ));
    }

    #[test]
    fn calibration_separates_clean_counts() {
        let samples: Vec<(u8, usize)> = (1..=8u8)
            .flat_map(|c| (0..20).map(move |j| (c, 12 * usize::from(c) - j % 3)))
            .collect();
        let bins = calibrate_bins(&samples).unwrap();
        for &(c, n) in &samples {
            assert_eq!(class_from_count(n, Some(&bins)).unwrap(), c);
        }
        assert!(calibrate_bins(&[(1, 12)]).is_err());
    }

    #[test]
    fn rows_and_csv() {
        let counts = vec![Ok(12), Ok(96), Ok(95), Err(Error::EmptyInput("x")), Ok(30)];
        let row = prevalence_row(&[8, 1], &counts, &ClassBins::default()).unwrap();
        assert_eq!(row.training_classes, vec![1, 8]);
        assert_eq!(row.evaluated, 4);
        assert_eq!(row.failures, 1);
        assert_eq!(row.prevalence[0], 25.0);
        assert_eq!(row.prevalence[7], 50.0);
        assert_eq!(row.leakage(), 25.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        write_prevalence_csv(&path, &[row]).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("training_classes,evaluated,failures,class_1"));
        assert!(text.contains("1;8,4,1,25.000"));
    }
}
