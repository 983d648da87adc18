//! Laplacian zero-crossing map for spotting texture inside nominally flat regions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::raster::GrayImage;

use super::detect::{detect_regions, DetectionConfig};
use super::RegionMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplacianConfig {
    /// Gaussian pre-smoothing scale.
    pub sigma_l: f64,
    /// Minimum Laplacian jump across a sign change.
    pub epsilon_l: f64,
    /// Chebyshev half-width of the band excluded around detected boundaries.
    pub boundary_band: usize,
}

impl Default for LaplacianConfig {
    fn default() -> Self {
        LaplacianConfig {
            sigma_l: 0.7,
            epsilon_l: 1.0,
            boundary_band: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZeroCrossings {
    pub width: usize,
    pub height: usize,
    pub crossings: Vec<bool>,
    /// Pixels outside the boundary band.
    pub interior_pixels: usize,
    /// Fraction of interior pixels that are crossings; 0 when there is no interior.
    pub interior_density: f64,
}

fn smooth(image: &GrayImage, sigma: f64) -> Vec<f64> {
    let (w, h) = image.dimensions();
    let src = image.to_f64();
    if sigma <= 0.0 {
        return src;
    }
    let r = (4.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, c)| c * src[y * w + clamp(x as i64 + j as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, c)| c * tmp[clamp(y as i64 + j as i64 - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Zero crossings of the 4-neighbor Laplacian of the smoothed image, with
/// the interior band taken from an already recovered region map.
pub fn laplacian_zero_crossings_with(
    image: &GrayImage,
    regions: &RegionMap,
    config: &LaplacianConfig,
) -> ZeroCrossings {
    let (w, h) = image.dimensions();
    let s = smooth(image, config.sigma_l);
    let at = |x: usize, y: usize| s[y * w + x];
    let mut lap = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            // Replicated borders: a missing neighbor contributes the center value.
            let c = at(x, y);
            let l = if x > 0 { at(x - 1, y) } else { c };
            let r = if x + 1 < w { at(x + 1, y) } else { c };
            let u = if y > 0 { at(x, y - 1) } else { c };
            let d = if y + 1 < h { at(x, y + 1) } else { c };
            lap[y * w + x] = l + r + u + d - 4.0 * c;
        }
    }
    let mut crossings = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let a = lap[y * w + x];
            let hit = |b: f64| a * b < 0.0 && (a - b).abs() > config.epsilon_l;
            crossings[y * w + x] = (x > 0 && hit(lap[y * w + x - 1]))
                || (x + 1 < w && hit(lap[y * w + x + 1]))
                || (y > 0 && hit(lap[(y - 1) * w + x]))
                || (y + 1 < h && hit(lap[(y + 1) * w + x]));
        }
    }

    let boundary = regions.boundary_mask();
    let band = config.boundary_band;
    let mut excluded = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if boundary[y * w + x] {
                for yy in y.saturating_sub(band)..=(y + band).min(h - 1) {
                    for xx in x.saturating_sub(band)..=(x + band).min(w - 1) {
                        excluded[yy * w + xx] = true;
                    }
                }
            }
        }
    }
    let interior_pixels = excluded.iter().filter(|&&e| !e).count();
    let interior_hits = crossings
        .iter()
        .zip(&excluded)
        .filter(|&(&c, &e)| c && !e)
        .count();
    ZeroCrossings {
        width: w,
        height: h,
        crossings,
        interior_pixels,
        interior_density: if interior_pixels == 0 {
            0.0
        } else {
            interior_hits as f64 / interior_pixels as f64
        },
    }
}

/// Runs region detection with default settings, then
/// [`laplacian_zero_crossings_with`] using default Laplacian settings.
pub fn laplacian_zero_crossings(image: &GrayImage) -> ZeroCrossings {
    let regions = detect_regions(image, &DetectionConfig::default());
    laplacian_zero_crossings_with(image, &regions, &LaplacianConfig::default())
}

/// Adds -1 or +1 with equal probability to every pixel, clamped to 0..=255.
pub fn dither<R: Rng + ?Sized>(image: &GrayImage, rng: &mut R) -> GrayImage {
    let mut out = image.clone();
    for p in out.pixels_mut() {
        *p = if rng.random::<bool>() {
            p.saturating_add(1)
        } else {
            p.saturating_sub(1)
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_stream;
    use crate::voronoi::{generate_voronoi, VoronoiParams};

    #[test]
    fn constant_image_has_no_crossings() {
        let z = laplacian_zero_crossings(&GrayImage::filled(256, 256, 90));
        assert!(z.crossings.iter().all(|&c| !c));
        assert_eq!(z.interior_density, 0.0);
        assert_eq!(z.interior_pixels, 65536);
    }

    #[test]
    fn dither_separates_true_from_textured() {
        let p = VoronoiParams::default();
        for class in [1u8, 4, 8] {
            let (im, _) =
                generate_voronoi(class, &p, &mut rng_stream(11, u64::from(class))).unwrap();
            let clean = laplacian_zero_crossings(&im);
            let noisy = laplacian_zero_crossings(&dither(&im, &mut rng_stream(12, 0)));
            assert!(clean.interior_density < 0.01, "{}", clean.interior_density);
            assert!(noisy.interior_density > 0.2, "{}", noisy.interior_density);
        }
    }

    #[test]
    fn dither_moves_each_pixel_by_one() {
        let im = GrayImage::filled(16, 16, 100);
        let d = dither(&im, &mut rng_stream(1, 1));
        assert!(d.pixels().iter().all(|&v| v == 99 || v == 101));
        let edge = dither(&GrayImage::filled(4, 4, 0), &mut rng_stream(1, 2));
        assert!(edge.pixels().iter().all(|&v| v <= 1));
    }
}
