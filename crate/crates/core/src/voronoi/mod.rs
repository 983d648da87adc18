//! Eight-class Voronoi SOM.
//!
//! Class `k` tessellates the canvas into `12 k` nearest-center regions. Each
//! region is painted with one value from a 128-level palette, and brighter
//! values go to larger regions.

mod detect;
mod laplacian;
mod prevalence;

pub use detect::{detect_regions, DetectionConfig, HessianThreshold};
pub use laplacian::{
    dither, laplacian_zero_crossings, laplacian_zero_crossings_with, LaplacianConfig, ZeroCrossings,
};
pub use prevalence::{
    calibrate_bins, class_from_count, prevalence_experiment, prevalence_row, write_prevalence_csv,
    ClassBins, PrevalenceRow,
};

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{save_label_png, GrayImage, SOM_SIZE};
use crate::stats::spearman::spearman_rho;

pub const CLASS_COUNT: u8 = 8;
pub const REGIONS_PER_CLASS: usize = 12;
pub const PALETTE_LEVELS: usize = 128;
pub const PALETTE_STEP: u8 = 2;

/// Class layout and shade palette.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoronoiParams {
    pub class_to_regions: Vec<usize>,
    pub palette: Vec<u8>,
}

impl Default for VoronoiParams {
    fn default() -> Self {
        VoronoiParams {
            class_to_regions: (1..=usize::from(CLASS_COUNT))
                .map(|k| REGIONS_PER_CLASS * k)
                .collect(),
            palette: (0..PALETTE_LEVELS)
                .map(|i| i as u8 * PALETTE_STEP)
                .collect(),
        }
    }
}

impl VoronoiParams {
    pub fn regions(&self, class_id: u8) -> Result<usize> {
        usize::from(class_id)
            .checked_sub(1)
            .and_then(|k| self.class_to_regions.get(k))
            .copied()
            .ok_or_else(|| {
                Error::InvalidParameter(format!("voronoi class {class_id} not in 1..=8"))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub label: u32,
    /// Pixel count.
    pub area: usize,
    pub shade: f64,
    /// Exact polygon area of the clipped Voronoi cell; ground truth only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_area: Option<f64>,
}

/// Label raster plus per-region records. Label 0 marks boundary or
/// unassigned pixels; regions are labeled `1..=region_count`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub regions: Vec<RegionRecord>,
}

impl RegionMap {
    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// `(area, shade)` pairs, preferring exact areas when present.
    pub fn area_shade_pairs(&self) -> Vec<(f64, f64)> {
        self.regions
            .iter()
            .map(|r| (r.exact_area.unwrap_or(r.area as f64), r.shade))
            .collect()
    }

    /// Spearman correlation between region area and shade.
    pub fn area_shade_rho(&self) -> Result<f64> {
        spearman_rho(&self.area_shade_pairs())
    }

    /// Pixels with a 4-neighbor carrying a different label.
    pub fn boundary_mask(&self) -> Vec<bool> {
        let (w, h) = (self.width, self.height);
        let mut mask = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let l = self.labels[y * w + x];
                let differs = (x > 0 && self.labels[y * w + x - 1] != l)
                    || (x + 1 < w && self.labels[y * w + x + 1] != l)
                    || (y > 0 && self.labels[(y - 1) * w + x] != l)
                    || (y + 1 < h && self.labels[(y + 1) * w + x] != l);
                mask[y * w + x] = differs || l == 0;
            }
        }
        mask
    }

    /// Writes `{stem}.png` (16-bit labels) and `{stem}.json` (region table).
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        save_label_png(
            &self.labels,
            self.width,
            self.height,
            dir.join(format!("{stem}.png")),
        )?;
        let path = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&self.regions)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let (width, height, labels) =
            crate::raster::load_label_png(dir.join(format!("{stem}.png")))?;
        let path = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(RegionMap {
            width,
            height,
            labels,
            regions: serde_json::from_str(&text)?,
        })
    }
}

/// Area of the axis-aligned `[x0, x1] x [y0, y1]` rectangle intersected with
/// the half-planes closer to `centers[i]` than to every other center.
fn cell_area(centers: &[(f64, f64)], i: usize, bounds: (f64, f64, f64, f64)) -> f64 {
    let (x0, y0, x1, y1) = bounds;
    let mut poly = vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
    let (px, py) = centers[i];
    for (j, &(qx, qy)) in centers.iter().enumerate() {
        if j == i || poly.is_empty() {
            continue;
        }
        // Keep points with n . p <= c, the side of the bisector nearer to i.
        let (nx, ny) = (qx - px, qy - py);
        let c = 0.5 * (qx * qx + qy * qy - px * px - py * py);
        let side = |p: (f64, f64)| nx * p.0 + ny * p.1 - c;
        let mut out = Vec::with_capacity(poly.len() + 1);
        for k in 0..poly.len() {
            let a = poly[k];
            let b = poly[(k + 1) % poly.len()];
            let (sa, sb) = (side(a), side(b));
            if sa <= 0.0 {
                out.push(a);
            }
            if (sa < 0.0 && sb > 0.0) || (sa > 0.0 && sb < 0.0) {
                let t = sa / (sa - sb);
                out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
            }
        }
        poly = out;
    }
    let n = poly.len();
    0.5 * (0..n)
        .map(|k| {
            let (a, b) = (poly[k], poly[(k + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        .abs()
}

/// One realization and its ground-truth region map.
///
/// Centers are distinct pixel positions drawn uniformly; each pixel takes the
/// nearest center (lowest index on ties). Shades are distinct palette values,
/// sorted and handed out in ascending order of exact cell area.
pub fn generate_voronoi<R: Rng + ?Sized>(
    class_id: u8,
    params: &VoronoiParams,
    rng: &mut R,
) -> Result<(GrayImage, RegionMap)> {
    let n = params.regions(class_id)?;
    let (w, h) = (SOM_SIZE, SOM_SIZE);
    if n > params.palette.len() || n > w * h {
        return Err(Error::InvalidParameter(format!(
            "{n} regions exceed the palette"
        )));
    }
    let centers: Vec<(f64, f64)> = sample(rng, w * h, n)
        .into_iter()
        .map(|k| ((k % w) as f64, (k / w) as f64))
        .collect();

    let mut labels = vec![0u32; w * h];
    let mut pixel_area = vec![0usize; n];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64, y as f64);
            let mut best = (f64::INFINITY, 0usize);
            for (i, &(cx, cy)) in centers.iter().enumerate() {
                let d = (fx - cx) * (fx - cx) + (fy - cy) * (fy - cy);
                if d < best.0 {
                    best = (d, i);
                }
            }
            labels[y * w + x] = best.1 as u32 + 1;
            pixel_area[best.1] += 1;
        }
    }

    let bounds = (-0.5, -0.5, w as f64 - 0.5, h as f64 - 0.5);
    let exact: Vec<f64> = (0..n).map(|i| cell_area(&centers, i, bounds)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| exact[a].total_cmp(&exact[b]).then(a.cmp(&b)));
    let mut shades: Vec<u8> = sample(rng, params.palette.len(), n)
        .into_iter()
        .map(|k| params.palette[k])
        .collect();
    shades.sort_unstable();
    let mut shade_of = vec![0u8; n];
    for (rank, &region) in order.iter().enumerate() {
        shade_of[region] = shades[rank];
    }

    let pixels = labels.iter().map(|&l| shade_of[l as usize - 1]).collect();
    let image = GrayImage::from_pixels(w, h, pixels)?;
    let regions = (0..n)
        .map(|i| RegionRecord {
            label: i as u32 + 1,
            area: pixel_area[i],
            shade: f64::from(shade_of[i]),
            exact_area: Some(exact[i]),
        })
        .collect();
    Ok((
        image,
        RegionMap {
            width: w,
            height: h,
            labels,
            regions,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_stream;

    #[test]
    fn params_invariants() {
        let p = VoronoiParams::default();
        assert_eq!(p.palette.len(), 128);
        assert_eq!(p.palette[0], 0);
        assert_eq!(*p.palette.last().unwrap(), 254);
        assert!(p.palette.windows(2).all(|w| w[1] - w[0] == 2));
        assert_eq!(p.regions(1).unwrap(), 12);
        assert_eq!(p.regions(8).unwrap(), 96);
        assert!(p.regions(0).is_err() && p.regions(9).is_err());
    }

    #[test]
    fn cell_areas_tile_the_rectangle() {
        let mut rng = rng_stream(1, 0);
        let centers: Vec<(f64, f64)> = (0..30)
            .map(|_| (rng.random_range(0.0..10.0), rng.random_range(0.0..5.0)))
            .collect();
        let total: f64 = (0..30)
            .map(|i| cell_area(&centers, i, (0.0, 0.0, 10.0, 5.0)))
            .sum();
        assert!((total - 50.0).abs() < 1e-9);
        // Two centers split a square along the vertical bisector.
        let two = [(1.0, 1.0), (3.0, 1.0)];
        assert!((cell_area(&two, 0, (0.0, 0.0, 4.0, 2.0)) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ground_truth_construction() {
        let p = VoronoiParams::default();
        for class in 1..=8u8 {
            let (im, map) =
                generate_voronoi(class, &p, &mut rng_stream(2, u64::from(class))).unwrap();
            assert_eq!(map.region_count(), 12 * usize::from(class));
            assert_eq!(map.regions.iter().map(|r| r.area).sum::<usize>(), 65536);
            assert!(map.labels.iter().all(|&l| l >= 1));
            for (px, &l) in im.pixels().iter().zip(&map.labels) {
                assert_eq!(f64::from(*px), map.regions[l as usize - 1].shade);
                assert_eq!(px % 2, 0);
            }
            let mut shades: Vec<u64> = map.regions.iter().map(|r| r.shade as u64).collect();
            shades.sort_unstable();
            shades.dedup();
            assert_eq!(shades.len(), map.region_count());
            let mut by_area = map.regions.clone();
            by_area.sort_by(|a, b| a.exact_area.unwrap().total_cmp(&b.exact_area.unwrap()));
            assert!(by_area.windows(2).all(|w| w[0].shade < w[1].shade));
            assert_eq!(map.area_shade_rho().unwrap(), 1.0);
            for r in &map.regions {
                assert!(
                    (r.exact_area.unwrap() - r.area as f64).abs() < 0.15 * r.area as f64 + 40.0
                );
            }
        }
    }

    #[test]
    fn region_map_round_trips_through_disk() {
        let (_, map) =
            generate_voronoi(2, &VoronoiParams::default(), &mut rng_stream(3, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        map.save(dir.path(), "map").unwrap();
        assert_eq!(RegionMap::load(dir.path(), "map").unwrap(), map);
    }
}
