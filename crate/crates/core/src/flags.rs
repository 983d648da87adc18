//! Eight-class block-grid SOM.
//!
//! A 256x256 canvas is divided into a 16x16 grid of 16-pixel squares. Each
//! class declares exactly 80 squares foreground; foreground pixels are drawn
//! from `Beta(4, 2, 96, 152)` and background pixels from `Beta(2, 4, 8, 192)`,
//! each set scattered uniformly over its own squares. A fixed set of squares
//! is background in every class.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{split_tiles, GrayImage, SOM_SIZE};
use crate::stats::beta::{BetaSpec, ScaledBetaSampler};
use crate::stats::calibration::ToleranceCalibration;
use crate::stats::chi_square::{chi_square_gof, Expected};
use crate::stats::histogram::Histogram;
use crate::stats::moran::{two_sided_critical, Adjacency, MoranWeights};
use crate::stats::qq::IntensityDistribution;

/// Squares per side.
pub const GRID: usize = 16;
/// Pixels per square side.
pub const CELL: usize = SOM_SIZE / GRID;
pub const FOREGROUND_CELLS: usize = 80;
pub const MIN_FORBIDDEN_CELLS: usize = 24;
pub const CLASS_COUNT: usize = 8;
/// Tile-mean cut between the two intensity modes.
pub const FOREGROUND_THRESHOLD: f64 = 140.0;

static BUILTIN_TEMPLATES: &str = include_str!("../assets/flag_templates.json");

/// A 16x16 boolean grid of squares, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct CellGrid(Vec<bool>);

impl std::fmt::Debug for CellGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for row in self.to_rows() {
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

impl Default for CellGrid {
    fn default() -> Self {
        CellGrid(vec![false; GRID * GRID])
    }
}

impl CellGrid {
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.0[row * GRID + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.0[row * GRID + col] = v;
    }

    pub fn cells(&self) -> &[bool] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn hamming(&self, other: &CellGrid) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    /// Mean absolute error between the two grids as 0/1 rasters.
    pub fn mae(&self, other: &CellGrid) -> f64 {
        self.hamming(other) as f64 / (GRID * GRID) as f64
    }

    pub fn from_rows<S: AsRef<str>>(rows: &[S]) -> Result<Self> {
        if rows.len() != GRID {
            return Err(Error::InvalidParameter(format!(
                "{} template rows",
                rows.len()
            )));
        }
        let mut grid = CellGrid::default();
        for (r, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.chars().count() != GRID {
                return Err(Error::InvalidParameter(format!(
                    "template row {r} has wrong width"
                )));
            }
            for (c, ch) in row.chars().enumerate() {
                match ch {
                    '#' => grid.set(r, c, true),
                    '.' => {}
                    other => {
                        return Err(Error::InvalidParameter(format!(
                            "unexpected template character {other:?}"
                        )))
                    }
                }
            }
        }
        Ok(grid)
    }

    pub fn to_rows(&self) -> Vec<String> {
        self.0
            .chunks(GRID)
            .map(|r| r.iter().map(|&b| if b { '#' } else { '.' }).collect())
            .collect()
    }
}

impl Serialize for CellGrid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for CellGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<String>::deserialize(d)?;
        CellGrid::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlagTemplate {
    pub class_id: u8,
    #[serde(default)]
    pub name: String,
    #[serde(rename = "rows")]
    pub foreground: CellGrid,
}

/// The eight class templates plus the designated never-foreground squares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlagTemplateSet {
    grid: usize,
    forbidden: Vec<(usize, usize)>,
    templates: Vec<FlagTemplate>,
}

impl FlagTemplateSet {
    /// The canonical template set shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_TEMPLATES).expect("bundled flag templates are valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut set: FlagTemplateSet = serde_json::from_str(text)?;
        set.templates.sort_by_key(|t| t.class_id);
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks cell counts, class ids, pairwise distinctness and the
    /// never-foreground squares.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.grid != GRID {
            return bad(format!("grid must be {GRID}, got {}", self.grid));
        }
        if self.templates.len() != CLASS_COUNT {
            return bad(format!(
                "{} templates, expected {CLASS_COUNT}",
                self.templates.len()
            ));
        }
        for (k, t) in self.templates.iter().enumerate() {
            if usize::from(t.class_id) != k + 1 {
                return bad(format!("class ids must be 1..=8, found {}", t.class_id));
            }
            if t.foreground.count() != FOREGROUND_CELLS {
                return bad(format!(
                    "class {} has {} foreground squares",
                    t.class_id,
                    t.foreground.count()
                ));
            }
        }
        for (i, a) in self.templates.iter().enumerate() {
            for b in &self.templates[i + 1..] {
                if a.foreground.hamming(&b.foreground) == 0 {
                    return bad(format!(
                        "classes {} and {} coincide",
                        a.class_id, b.class_id
                    ));
                }
            }
        }
        if self.forbidden.len() < MIN_FORBIDDEN_CELLS {
            return bad(format!("only {} forbidden squares", self.forbidden.len()));
        }
        let never = self.never_foreground();
        for &(r, c) in &self.forbidden {
            if r >= GRID || c >= GRID || !never.get(r, c) {
                return bad(format!(
                    "forbidden square ({r}, {c}) is foreground in some class"
                ));
            }
        }
        if never.count() < MIN_FORBIDDEN_CELLS {
            return bad("fewer than 24 never-foreground squares".into());
        }
        Ok(())
    }

    pub fn templates(&self) -> &[FlagTemplate] {
        &self.templates
    }

    pub fn template(&self, class_id: u8) -> Result<&FlagTemplate> {
        self.templates
            .get(usize::from(class_id).wrapping_sub(1))
            .ok_or_else(|| Error::InvalidParameter(format!("flags class {class_id} not in 1..=8")))
    }

    pub fn forbidden(&self) -> &[(usize, usize)] {
        &self.forbidden
    }

    /// Squares that are background in every class.
    pub fn never_foreground(&self) -> CellGrid {
        let mut g = CellGrid(vec![true; GRID * GRID]);
        for t in &self.templates {
            for (k, &fg) in t.foreground.cells().iter().enumerate() {
                if fg {
                    g.0[k] = false;
                }
            }
        }
        g
    }
}

/// Pixel indices covered by the squares where `grid` equals `want`, row-major.
fn pixel_slots(grid: &CellGrid, want: bool) -> Vec<usize> {
    let mut slots = Vec::new();
    for y in 0..SOM_SIZE {
        for x in 0..SOM_SIZE {
            if grid.get(y / CELL, x / CELL) == want {
                slots.push(y * SOM_SIZE + x);
            }
        }
    }
    slots
}

/// Holds the samplers so an ensemble does not rebuild them per realization.
#[derive(Clone, Debug)]
pub struct FlagsGenerator {
    templates: FlagTemplateSet,
    foreground: ScaledBetaSampler,
    background: ScaledBetaSampler,
}

impl FlagsGenerator {
    pub fn new(templates: FlagTemplateSet) -> Result<Self> {
        Ok(FlagsGenerator {
            templates,
            foreground: ScaledBetaSampler::new(BetaSpec::FOREGROUND)?,
            background: ScaledBetaSampler::new(BetaSpec::BACKGROUND)?,
        })
    }

    pub fn templates(&self) -> &FlagTemplateSet {
        &self.templates
    }

    pub fn generate<R: Rng + ?Sized>(&self, class_id: u8, rng: &mut R) -> Result<GrayImage> {
        let template = self.templates.template(class_id)?;
        let mut image = GrayImage::som_canvas();
        for (want, sampler) in [(true, &self.foreground), (false, &self.background)] {
            let slots = pixel_slots(&template.foreground, want);
            let mut values = vec![0u8; slots.len()];
            sampler.fill(rng, &mut values);
            values.shuffle(rng);
            let px = image.pixels_mut();
            for (&slot, &v) in slots.iter().zip(&values) {
                px[slot] = v;
            }
        }
        Ok(image)
    }
}

pub fn generate_flags<R: Rng + ?Sized>(
    class_id: u8,
    templates: &FlagTemplateSet,
    rng: &mut R,
) -> Result<GrayImage> {
    FlagsGenerator::new(templates.clone())?.generate(class_id, rng)
}

/// Post-hoc recovery of a flags realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlagsRecovery {
    pub class_id: u8,
    pub recovered_foreground: CellGrid,
    pub template_mae: f64,
    pub perfect_match: bool,
}

/// Labels each square by its mean against [`FOREGROUND_THRESHOLD`] and picks
/// the template with the smallest mean absolute error (lowest class on ties).
pub fn classify_flags(image: &GrayImage, templates: &FlagTemplateSet) -> Result<FlagsRecovery> {
    image.require_dimensions(SOM_SIZE, SOM_SIZE)?;
    let mut recovered = CellGrid::default();
    for tile in split_tiles(image, CELL)?.tiles() {
        let (r, c) = tile.position();
        recovered.set(r, c, tile.mean() > FOREGROUND_THRESHOLD);
    }
    let (best, distance) = templates
        .templates()
        .iter()
        .map(|t| (t, t.foreground.hamming(&recovered)))
        .min_by_key(|&(t, d)| (d, t.class_id))
        .expect("template set is never empty");
    Ok(FlagsRecovery {
        class_id: best.class_id,
        template_mae: distance as f64 / (GRID * GRID) as f64,
        perfect_match: distance == 0,
        recovered_foreground: recovered,
    })
}

/// Pixels of the squares recovered as foreground (`true`) or background.
pub fn population(image: &GrayImage, recovery: &FlagsRecovery, foreground: bool) -> Vec<u8> {
    let px = image.pixels();
    pixel_slots(&recovery.recovered_foreground, foreground)
        .into_iter()
        .map(|i| px[i])
        .collect()
}

/// Reference distributions and binning for the per-realization chi-square tests.
#[derive(Clone, Debug)]
pub struct IntensityModel {
    fg_hist: Histogram,
    bg_hist: Histogram,
    fg_probs: Vec<f64>,
    bg_probs: Vec<f64>,
}

impl IntensityModel {
    pub fn new(foreground: BetaSpec, background: BetaSpec) -> Result<Self> {
        let fg = ScaledBetaSampler::new(foreground)?;
        let bg = ScaledBetaSampler::new(background)?;
        let fg_hist = fg.default_histogram();
        let bg_hist = bg.default_histogram();
        Ok(IntensityModel {
            fg_probs: fg.bin_probabilities(&fg_hist),
            bg_probs: bg.bin_probabilities(&bg_hist),
            fg_hist,
            bg_hist,
        })
    }

    pub fn flags() -> Self {
        Self::new(BetaSpec::FOREGROUND, BetaSpec::BACKGROUND).expect("flags specs are valid")
    }

    fn statistic(hist: &Histogram, probs: &[f64], pixels: &[u8]) -> Result<f64> {
        let mut h = hist.clone();
        // Out-of-support pixels land in the nearest edge bin so they still count.
        let (lo, hi) = (hist.edges()[0], *hist.edges().last().unwrap());
        h.extend(pixels.iter().map(|&p| f64::from(p).clamp(lo, hi)));
        Ok(chi_square_gof(&h, Expected::Probabilities(probs))?.statistic)
    }

    /// `(foreground chi2, background chi2)` for one recovered realization.
    pub fn statistics(&self, image: &GrayImage, recovery: &FlagsRecovery) -> Result<(f64, f64)> {
        let fg = population(image, recovery, true);
        let bg = population(image, recovery, false);
        Ok((
            Self::statistic(&self.fg_hist, &self.fg_probs, &fg)?,
            Self::statistic(&self.bg_hist, &self.bg_probs, &bg)?,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityTolerances {
    pub foreground: ToleranceCalibration,
    pub background: ToleranceCalibration,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityCheck {
    pub fg_chi2: f64,
    pub bg_chi2: f64,
    pub fg_pass: bool,
    pub bg_pass: bool,
}

pub fn validate_intensities(
    model: &IntensityModel,
    image: &GrayImage,
    recovery: &FlagsRecovery,
    tolerances: Option<&IntensityTolerances>,
) -> Result<IntensityCheck> {
    let tol =
        tolerances.ok_or_else(|| Error::MissingCalibration("flags intensity tolerances".into()))?;
    let (fg_chi2, bg_chi2) = model.statistics(image, recovery)?;
    Ok(IntensityCheck {
        fg_chi2,
        bg_chi2,
        fg_pass: tol.foreground.accepts(fg_chi2),
        bg_pass: tol.background.accepts(bg_chi2),
    })
}

/// Pooled pixel distribution of any flags realization: the foreground and
/// background level distributions weighted 80/256 and 176/256.
pub fn mixture_distribution() -> IntensityDistribution {
    let fg = ScaledBetaSampler::new(BetaSpec::FOREGROUND)
        .expect("valid spec")
        .pmf_table();
    let bg = ScaledBetaSampler::new(BetaSpec::BACKGROUND)
        .expect("valid spec")
        .pmf_table();
    let cells = (GRID * GRID) as f64;
    let w_fg = FOREGROUND_CELLS as f64 / cells;
    let mut weights = [0.0; 256];
    for (v, w) in weights.iter_mut().enumerate() {
        *w = w_fg * fg[v] + (1.0 - w_fg) * bg[v];
    }
    IntensityDistribution::from_weights(&weights).expect("mixture has mass")
}

/// Per-tile Moran's I randomness rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomnessConfig {
    /// Two-sided significance of the per-tile test.
    pub per_tile_alpha: f64,
    /// A realization passes when strictly fewer tiles than this violate.
    pub max_violations: usize,
}

impl Default for RandomnessConfig {
    fn default() -> Self {
        RandomnessConfig::for_realization_alpha(0.05, GRID * GRID, 3)
    }
}

impl RandomnessConfig {
    /// Chooses the per-tile level so that, for independent tiles under the
    /// null, `P(violations >= max_violations) = realization_alpha`.
    pub fn for_realization_alpha(
        realization_alpha: f64,
        tiles: usize,
        max_violations: usize,
    ) -> Self {
        let tail = |p: f64| binomial_upper_tail(tiles, p, max_violations);
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if tail(mid) > realization_alpha {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        RandomnessConfig {
            per_tile_alpha: lo,
            max_violations,
        }
    }
}

/// `P(X >= k)` for `X ~ Binomial(n, p)`.
pub(crate) fn binomial_upper_tail(n: usize, p: f64, k: usize) -> f64 {
    let mut below = 0.0;
    let mut term = (1.0 - p).powi(n as i32);
    for i in 0..k.min(n + 1) {
        below += term;
        term *= (n - i) as f64 / (i + 1) as f64 * p / (1.0 - p);
    }
    (1.0 - below).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomnessCheck {
    pub violating_tiles: usize,
    pub foreground_violations: usize,
    pub background_violations: usize,
    /// Zero-variance tiles: reported, never counted as violations.
    pub degenerate_tiles: usize,
    pub pass: bool,
}

pub fn validate_randomness(
    image: &GrayImage,
    recovery: &FlagsRecovery,
    config: &RandomnessConfig,
) -> Result<RandomnessCheck> {
    image.require_dimensions(SOM_SIZE, SOM_SIZE)?;
    let weights = MoranWeights::new(CELL, CELL, Adjacency::Rook);
    let critical = two_sided_critical(config.per_tile_alpha);
    let mut check = RandomnessCheck {
        violating_tiles: 0,
        foreground_violations: 0,
        background_violations: 0,
        degenerate_tiles: 0,
        pass: false,
    };
    let mut values = vec![0.0; CELL * CELL];
    for tile in split_tiles(image, CELL)?.tiles() {
        for (v, p) in values.iter_mut().zip(tile.pixels()) {
            *v = f64::from(p);
        }
        match crate::stats::moran::morans_index_with(&values, &weights) {
            Ok(stat) => {
                if stat.z_score().abs() > critical {
                    check.violating_tiles += 1;
                    let (r, c) = tile.position();
                    if recovery.recovered_foreground.get(r, c) {
                        check.foreground_violations += 1;
                    } else {
                        check.background_violations += 1;
                    }
                }
            }
            Err(Error::Degenerate(_)) => check.degenerate_tiles += 1,
            Err(e) => return Err(e),
        }
    }
    check.pass = check.violating_tiles < config.max_violations;
    Ok(check)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPrevalence {
    pub counts: Vec<usize>,
    pub fractions: Vec<f64>,
    /// Population standard deviation across the class fractions.
    pub std_dev: f64,
}

/// Fractions of each class `1..=classes` among `labels`.
pub fn class_prevalence(labels: &[u8], classes: usize) -> Result<ClassPrevalence> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("no class labels"));
    }
    let mut counts = vec![0usize; classes];
    for &l in labels {
        let k = usize::from(l)
            .checked_sub(1)
            .filter(|&k| k < classes)
            .ok_or_else(|| Error::InvalidParameter(format!("class label {l} out of range")))?;
        counts[k] += 1;
    }
    let n = labels.len() as f64;
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let (_, std_dev) = crate::stats::mean_std(&fractions).expect("classes > 0");
    Ok(ClassPrevalence {
        counts,
        fractions,
        std_dev,
    })
}

/// Mutation operators used to probe validator sensitivity.
pub mod mutate {
    use super::*;

    /// Sorts every tile's pixels ascending in row-major order.
    pub fn sort_tiles(image: &GrayImage, tile_size: usize) -> Result<GrayImage> {
        sort_selected_tiles(image, tile_size, |_, _| true)
    }

    pub fn sort_selected_tiles(
        image: &GrayImage,
        tile_size: usize,
        mut select: impl FnMut(usize, usize) -> bool,
    ) -> Result<GrayImage> {
        let tiles: Vec<Vec<u8>> = split_tiles(image, tile_size)?
            .tiles()
            .map(|t| {
                let mut v = t.to_vec();
                let (r, c) = t.position();
                if select(r, c) {
                    v.sort_unstable();
                }
                v
            })
            .collect();
        GrayImage::from_tiles(image.width(), image.height(), tile_size, &tiles)
    }

    /// Exchanges all pixel intensities between squares `a` and `b`.
    pub fn swap_cells(image: &GrayImage, a: (usize, usize), b: (usize, usize)) -> GrayImage {
        let mut out = image.clone();
        for dy in 0..CELL {
            for dx in 0..CELL {
                let (ax, ay) = (a.1 * CELL + dx, a.0 * CELL + dy);
                let (bx, by) = (b.1 * CELL + dx, b.0 * CELL + dy);
                out.set(ax, ay, image.get(bx, by));
                out.set(bx, by, image.get(ax, ay));
            }
        }
        out
    }

    /// Replaces the pixels of `template` foreground squares with draws from `spec`.
    pub fn redraw_foreground<R: Rng + ?Sized>(
        image: &GrayImage,
        template: &FlagTemplate,
        spec: BetaSpec,
        rng: &mut R,
    ) -> Result<GrayImage> {
        let sampler = ScaledBetaSampler::new(spec)?;
        let mut out = image.clone();
        let px = out.pixels_mut();
        for slot in pixel_slots(&template.foreground, true) {
            px[slot] = sampler.sample(rng);
        }
        Ok(out)
    }

    /// Sorts the foreground intensities across all foreground slots, keeping
    /// the histogram but destroying the random arrangement.
    pub fn sort_foreground(image: &GrayImage, template: &FlagTemplate) -> GrayImage {
        let slots = pixel_slots(&template.foreground, true);
        let mut values: Vec<u8> = slots.iter().map(|&i| image.pixels()[i]).collect();
        values.sort_unstable();
        let mut out = image.clone();
        let px = out.pixels_mut();
        for (&slot, v) in slots.iter().zip(values) {
            px[slot] = v;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_stream;

    fn generator() -> FlagsGenerator {
        FlagsGenerator::new(FlagTemplateSet::builtin()).unwrap()
    }

    #[test]
    fn builtin_templates_validate() {
        let set = FlagTemplateSet::builtin();
        assert_eq!(set.templates().len(), 8);
        assert!(set.never_foreground().count() >= 24);
        assert_eq!(set.forbidden().len(), 24);
        let json = set.to_json().unwrap();
        assert_eq!(FlagTemplateSet::from_json(&json).unwrap(), set);
    }

    #[test]
    fn invalid_template_sets_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(BUILTIN_TEMPLATES).unwrap();
        v["templates"][0]["rows"][15] = serde_json::Value::from("################");
        assert!(FlagTemplateSet::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(BUILTIN_TEMPLATES).unwrap();
        v["templates"][1] = v["templates"][0].clone();
        v["templates"][1]["class_id"] = 2.into();
        assert!(FlagTemplateSet::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn realizations_respect_template_and_ranges() {
        let g = generator();
        for class in 1..=8u8 {
            let im = g
                .generate(class, &mut rng_stream(10, u64::from(class)))
                .unwrap();
            let t = g.templates().template(class).unwrap();
            let mut fg_in_range = 0;
            for y in 0..SOM_SIZE {
                for x in 0..SOM_SIZE {
                    let v = im.get(x, y);
                    if t.foreground.get(y / CELL, x / CELL) {
                        assert!((97..=247).contains(&v));
                        fg_in_range += 1;
                    } else {
                        assert!((9..=199).contains(&v));
                    }
                }
            }
            assert_eq!(fg_in_range, 20480);
            for &(r, c) in g.templates().forbidden() {
                assert!(!t.foreground.get(r, c));
            }
        }
    }

    #[test]
    fn round_trip_classification() {
        let g = generator();
        for class in 1..=8u8 {
            for seed in 0..25 {
                let im = g
                    .generate(class, &mut rng_stream(seed, u64::from(class)))
                    .unwrap();
                let rec = classify_flags(&im, g.templates()).unwrap();
                assert_eq!(rec.class_id, class);
                assert!(rec.perfect_match);
                assert_eq!(rec.template_mae, 0.0);
            }
        }
    }

    #[test]
    fn swapped_square_stays_in_class_without_perfect_match() {
        let g = generator();
        let t = g.templates().template(5).unwrap();
        let fg_cell = (0..256).find(|&k| t.foreground.cells()[k]).unwrap();
        let bg_cell = (0..256).find(|&k| !t.foreground.cells()[k]).unwrap();
        let im = g.generate(5, &mut rng_stream(3, 3)).unwrap();
        let swapped = mutate::swap_cells(
            &im,
            (fg_cell / GRID, fg_cell % GRID),
            (bg_cell / GRID, bg_cell % GRID),
        );
        let rec = classify_flags(&swapped, g.templates()).unwrap();
        assert_eq!(rec.class_id, 5);
        assert!(!rec.perfect_match);
        assert_eq!(rec.template_mae, 2.0 / 256.0);
    }

    #[test]
    fn all_zero_image_ties_to_class_one() {
        let rec = classify_flags(&GrayImage::som_canvas(), &FlagTemplateSet::builtin()).unwrap();
        assert_eq!(rec.recovered_foreground.count(), 0);
        assert_eq!(rec.template_mae, 80.0 / 256.0);
        assert_eq!(rec.class_id, 1);
    }

    #[test]
    fn classification_ignores_within_tile_permutation() {
        let g = generator();
        let im = g.generate(2, &mut rng_stream(4, 0)).unwrap();
        let sorted = mutate::sort_tiles(&im, CELL).unwrap();
        assert_eq!(
            classify_flags(&im, g.templates()).unwrap(),
            classify_flags(&sorted, g.templates()).unwrap()
        );
    }

    #[test]
    fn intensity_checks_on_mutations() {
        let g = generator();
        let model = IntensityModel::flags();
        let im = g.generate(4, &mut rng_stream(5, 0)).unwrap();
        let rec = classify_flags(&im, g.templates()).unwrap();
        let (fg, bg) = model.statistics(&im, &rec).unwrap();
        let tol = IntensityTolerances {
            foreground: ToleranceCalibration {
                statistic_name: "fg".into(),
                percentile: 0.995,
                threshold: fg.max(60.0),
                calibration_size: 1,
            },
            background: ToleranceCalibration {
                statistic_name: "bg".into(),
                percentile: 0.995,
                threshold: bg.max(60.0),
                calibration_size: 1,
            },
        };
        let t = g.templates().template(4).unwrap();
        let redrawn =
            mutate::redraw_foreground(&im, t, BetaSpec::BACKGROUND, &mut rng_stream(5, 1)).unwrap();
        // The redrawn foreground is too dark to be found; test against the template grid.
        let truth = FlagsRecovery {
            class_id: 4,
            recovered_foreground: t.foreground.clone(),
            template_mae: 0.0,
            perfect_match: true,
        };
        let check = validate_intensities(&model, &redrawn, &truth, Some(&tol)).unwrap();
        assert!(!check.fg_pass, "{check:?}");
        let sorted = mutate::sort_foreground(&im, t);
        let check = validate_intensities(&model, &sorted, &truth, Some(&tol)).unwrap();
        assert!(check.fg_pass && (check.fg_chi2 - fg).abs() < 1e-9);
        assert!(matches!(
            validate_intensities(&model, &im, &rec, None),
            Err(Error::MissingCalibration(_))
        ));
    }

    #[test]
    fn randomness_rule() {
        let g = generator();
        let cfg = RandomnessConfig::default();
        let im = g.generate(1, &mut rng_stream(6, 0)).unwrap();
        let rec = classify_flags(&im, g.templates()).unwrap();
        let sorted = mutate::sort_tiles(&im, CELL).unwrap();
        let check = validate_randomness(&sorted, &rec, &cfg).unwrap();
        assert!(!check.pass && check.violating_tiles >= 200, "{check:?}");
        let two =
            mutate::sort_selected_tiles(&im, CELL, |r, c| (r, c) == (0, 0) || (r, c) == (9, 9))
                .unwrap();
        let base = validate_randomness(&im, &rec, &cfg).unwrap();
        let check = validate_randomness(&two, &rec, &cfg).unwrap();
        assert!(check.violating_tiles <= base.violating_tiles + 2);
        if base.violating_tiles == 0 {
            assert!(check.pass && check.violating_tiles == 2);
        }
    }

    #[test]
    fn degenerate_tiles_are_counted_separately() {
        let im = GrayImage::filled(256, 256, 200);
        let rec = classify_flags(&im, &FlagTemplateSet::builtin()).unwrap();
        let check = validate_randomness(&im, &rec, &RandomnessConfig::default()).unwrap();
        assert_eq!(check.degenerate_tiles, 256);
        assert_eq!(check.violating_tiles, 0);
    }

    #[test]
    fn per_tile_alpha_inverts_binomial_tail() {
        let cfg = RandomnessConfig::default();
        let tail = binomial_upper_tail(256, cfg.per_tile_alpha, 3);
        assert!((tail - 0.05).abs() < 1e-9);
        assert!((binomial_upper_tail(2, 0.5, 1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn prevalence() {
        let balanced: Vec<u8> = (0..8000).map(|i| (i % 8 + 1) as u8).collect();
        let p = class_prevalence(&balanced, 8).unwrap();
        assert!(p.fractions.iter().all(|&f| f == 0.125));
        assert_eq!(p.std_dev, 0.0);
        let one = class_prevalence(&[3u8; 100], 8).unwrap();
        assert_eq!(one.fractions[2], 1.0);
        assert!((one.std_dev - (7.0f64 / 64.0).sqrt()).abs() < 1e-12);
        assert!(class_prevalence(&[], 8).is_err());
        let mut rng = rng_stream(7, 0);
        let drawn: Vec<u8> = (0..8000).map(|_| rng.random_range(1..=8)).collect();
        let p = class_prevalence(&drawn, 8).unwrap();
        let band = 3.0 * (0.125f64 * 0.875 / 8000.0).sqrt();
        assert!(p.fractions.iter().all(|f| (f - 0.125).abs() < band));
        assert!((p.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pooled_pixels_follow_the_mixture() {
        let mix = mixture_distribution();
        assert!((mix.mass().iter().sum::<f64>() / mix.total() - 1.0).abs() < 1e-12);
        let analytic = 80.0 / 256.0 * BetaSpec::FOREGROUND.mean()
            + 176.0 / 256.0 * BetaSpec::BACKGROUND.mean();
        assert!(
            (mix.mean() - analytic).abs() < 0.5,
            "{} vs {analytic}",
            mix.mean()
        );
        let g = generator();
        let mut pooled = IntensityDistribution::default();
        for i in 0..40u64 {
            let im = g
                .generate((i % 8) as u8 + 1, &mut rng_stream(21, i))
                .unwrap();
            pooled.add_pixels(im.pixels());
        }
        let dev = crate::stats::qq::max_qq_deviation(&pooled.qq(&mix, 999).unwrap());
        assert!(dev <= 2.0, "{dev}");
    }
}
