//! Clustered lumpy background.
//!
//! Clusters land as a Poisson process over the frame (plus a margin so the
//! edges see the same density as the middle). Each cluster scatters a Poisson
//! number of anisotropic lumps around its center, every lump with its own
//! uniform orientation. Lumps add up in a float accumulator that is mapped to
//! 8 bits by one fixed affine transform shared by the whole ensemble.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::manifest::EnsembleManifest;
use crate::raster::{load_image, GrayImage, SOM_SIZE};
use crate::rng::rng_stream;
use crate::stats::calibration::percentile_sorted;

pub const CLB_PARAMS_SCHEMA_VERSION: u32 = 1;
/// Fewest realizations accepted by [`radial_autocorrelation`].
pub const MIN_AUTOCORRELATION_REALIZATIONS: usize = 100;

const BUILTIN_PARAMS: &str = include_str!("../assets/clb_params.json");

/// Affine map from accumulator values to 8-bit levels: `offset + scale * v`,
/// rounded and clamped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClbNormalization {
    pub offset: f64,
    pub scale: f64,
    /// Pilot ensemble size the map was fitted on; 0 if set by hand.
    #[serde(default)]
    pub pilot_size: usize,
}

impl ClbNormalization {
    pub fn apply(&self, field: &[f64], width: usize, height: usize) -> GrayImage {
        let pixels = field
            .iter()
            .map(|&v| (self.offset + self.scale * v).round().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage::from_pixels(width, height, pixels).expect("field matches dimensions")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClbParams {
    pub schema_version: u32,
    /// Poisson mean of the cluster count on a `reference_width x reference_height` frame.
    pub mean_clusters: f64,
    pub reference_width: usize,
    pub reference_height: usize,
    pub mean_lumps_per_cluster: f64,
    /// Standard deviation of lump offsets from their cluster center.
    pub cluster_spread: f64,
    pub lump_length: f64,
    pub lump_width: f64,
    /// `(alpha, beta)` of the falloff `exp(-alpha r^beta / l(theta))`.
    pub profile_exponents: (f64, f64),
    pub amplitude: f64,
    /// Lumps are cut off outside the ellipse with semi-axes of this many
    /// lump lengths and widths.
    pub truncation_lengths: f64,
    /// Cluster centers may fall this many spreads outside the frame.
    pub center_margin_spreads: f64,
    pub normalization: ClbNormalization,
}

impl Default for ClbParams {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ClbParams {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_PARAMS).expect("bundled clb_params.json is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: ClbParams = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CLB_PARAMS_SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "clb params schema version {} (supported: {CLB_PARAMS_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let non_negative = [
            ("mean_clusters", self.mean_clusters),
            ("mean_lumps_per_cluster", self.mean_lumps_per_cluster),
            ("center_margin_spreads", self.center_margin_spreads),
        ];
        let positive = [
            ("cluster_spread", self.cluster_spread),
            ("lump_length", self.lump_length),
            ("lump_width", self.lump_width),
            ("alpha", self.profile_exponents.0),
            ("beta", self.profile_exponents.1),
            ("amplitude", self.amplitude),
            ("truncation_lengths", self.truncation_lengths),
            ("normalization scale", self.normalization.scale),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if self.reference_width == 0 || self.reference_height == 0 {
            return Err(Error::InvalidParameter("empty reference frame".into()));
        }
        if !self.normalization.offset.is_finite() {
            return Err(Error::InvalidParameter(
                "non-finite normalization offset".into(),
            ));
        }
        Ok(())
    }

    /// Poisson mean of the cluster count for a `width x height` frame.
    pub fn clusters_for(&self, width: usize, height: usize) -> f64 {
        self.mean_clusters * (width * height) as f64
            / (self.reference_width * self.reference_height) as f64
    }

    /// Unclipped profile of a lump at offset `(u, v)` in its own frame.
    pub fn profile(&self, u: f64, v: f64) -> f64 {
        let (alpha, beta) = self.profile_exponents;
        let (lx, ly) = (self.lump_length, self.lump_width);
        let r2 = u * u + v * v;
        if r2 == 0.0 {
            return self.amplitude;
        }
        let r = r2.sqrt();
        // l(theta) = lx ly / sqrt(lx^2 sin^2 + ly^2 cos^2), written without angles.
        let inv_l = (lx * lx * v * v + ly * ly * u * u).sqrt() / (lx * ly * r);
        let rb = if beta == 0.5 { r.sqrt() } else { r.powf(beta) };
        self.amplitude * (-alpha * rb * inv_l).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lump {
    pub x: f64,
    pub y: f64,
    /// Orientation of the long axis, radians.
    pub theta: f64,
}

/// Draws cluster centers and lumps for one `width x height` realization.
pub fn sample_lumps<R: Rng + ?Sized>(
    params: &ClbParams,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Result<Vec<Lump>> {
    params.validate()?;
    let clusters = poisson(params.clusters_for(width, height), rng);
    let margin = params.center_margin_spreads * params.cluster_spread;
    let spread = Normal::new(0.0, params.cluster_spread)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut lumps = Vec::new();
    for _ in 0..clusters {
        let cx = rng.random_range(-margin..width as f64 + margin);
        let cy = rng.random_range(-margin..height as f64 + margin);
        let n = poisson(params.mean_lumps_per_cluster, rng);
        for _ in 0..n {
            lumps.push(Lump {
                x: cx + spread.sample(rng),
                y: cy + spread.sample(rng),
                theta: rng.random_range(0.0..TAU),
            });
        }
    }
    Ok(lumps)
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .expect("positive finite mean")
        .sample(rng) as u64
}

/// Superposes `lumps` into a row-major float field. Pixel `(x, y)` sits at
/// coordinates `(x, y)`.
pub fn render_lumps(params: &ClbParams, lumps: &[Lump], width: usize, height: usize) -> Vec<f64> {
    let mut field = vec![0.0; width * height];
    let a = params.truncation_lengths * params.lump_length;
    let b = params.truncation_lengths * params.lump_width;
    for lump in lumps {
        let (s, c) = lump.theta.sin_cos();
        let hx = (a * a * c * c + b * b * s * s).sqrt();
        let hy = (a * a * s * s + b * b * c * c).sqrt();
        let x0 = (lump.x - hx).ceil().max(0.0);
        let x1 = (lump.x + hx).floor().min(width as f64 - 1.0);
        let y0 = (lump.y - hy).ceil().max(0.0);
        let y1 = (lump.y + hy).floor().min(height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0 as usize..=y1 as usize {
            let dy = y as f64 - lump.y;
            let row = &mut field[y * width..(y + 1) * width];
            for (x, out) in row
                .iter_mut()
                .enumerate()
                .take(x1 as usize + 1)
                .skip(x0 as usize)
            {
                let dx = x as f64 - lump.x;
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                    *out += params.profile(u, v);
                }
            }
        }
    }
    field
}

/// Float accumulator of one realization, before 8-bit mapping.
pub fn generate_clb_field<R: Rng + ?Sized>(
    params: &ClbParams,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let lumps = sample_lumps(params, width, height, rng)?;
    Ok(render_lumps(params, &lumps, width, height))
}

/// One 256x256 realization.
pub fn generate_clb<R: Rng + ?Sized>(params: &ClbParams, rng: &mut R) -> Result<GrayImage> {
    let field = generate_clb_field(params, SOM_SIZE, SOM_SIZE, rng)?;
    Ok(params.normalization.apply(&field, SOM_SIZE, SOM_SIZE))
}

/// Fits the 8-bit map on a pilot ensemble so that its 0.1st and 99.9th
/// accumulator percentiles land on 0 and 255. Percentiles are taken over a
/// lattice of every `stride`-th pixel in each direction.
pub fn calibrate_normalization(
    params: &ClbParams,
    pilot_size: usize,
    master_seed: u64,
    stride: usize,
    exec: Execution,
) -> Result<ClbNormalization> {
    if pilot_size == 0 || stride == 0 {
        return Err(Error::InvalidParameter(
            "pilot size and stride must be positive".into(),
        ));
    }
    params.validate()?;
    let samples = exec.map(pilot_size, |i| -> Result<Vec<f64>> {
        let field = generate_clb_field(
            params,
            SOM_SIZE,
            SOM_SIZE,
            &mut rng_stream(master_seed, i as u64),
        )?;
        Ok((0..SOM_SIZE)
            .step_by(stride)
            .flat_map(|y| (0..SOM_SIZE).step_by(stride).map(move |x| (x, y)))
            .map(|(x, y)| field[y * SOM_SIZE + x])
            .collect())
    });
    let mut pooled = Vec::new();
    for s in samples {
        pooled.extend(s?);
    }
    pooled.sort_by(f64::total_cmp);
    let lo = percentile_sorted(&pooled, 0.001);
    let hi = percentile_sorted(&pooled, 0.999);
    if hi <= lo {
        return Err(Error::Degenerate("pilot ensemble has no spread"));
    }
    let scale = 255.0 / (hi - lo);
    Ok(ClbNormalization {
        offset: -lo * scale,
        scale,
        pilot_size,
    })
}

/// Ensemble-averaged autocorrelation, rotationally binned to integer lags
/// `0..=max_lag` and normalized to 1 at lag 0.
///
/// The ensemble mean intensity is removed before correlating, so the field is
/// treated as stationary across realizations.
pub fn radial_autocorrelation_images(images: &[GrayImage], max_lag: usize) -> Result<Vec<f64>> {
    if images.len() < MIN_AUTOCORRELATION_REALIZATIONS {
        return Err(Error::InsufficientData {
            needed: MIN_AUTOCORRELATION_REALIZATIONS,
            got: images.len(),
        });
    }
    let (w, h) = images[0].dimensions();
    for im in images {
        im.require_dimensions(w, h)?;
    }
    if max_lag >= w.min(h) {
        return Err(Error::InvalidParameter(format!(
            "max lag {max_lag} does not fit a {w}x{h} image"
        )));
    }
    let total: f64 = images
        .iter()
        .flat_map(|im| im.pixels())
        .map(|&p| f64::from(p))
        .sum();
    let mean = total / (images.len() * w * h) as f64;

    // Half-plane offsets: C(d) = C(-d).
    let lag = max_lag as i64;
    let offsets: Vec<(i64, i64, usize)> = (0..=lag)
        .flat_map(|dy| (-lag..=lag).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| dy > 0 || dx >= 0)
        .filter_map(|(dx, dy)| {
            let r = ((dx * dx + dy * dy) as f64).sqrt().round() as usize;
            (r <= max_lag).then_some((dx, dy, r))
        })
        .collect();
    let mut sums = vec![0.0; max_lag + 1];
    let mut counts = vec![0.0; max_lag + 1];
    for im in images {
        let c: Vec<f64> = im.pixels().iter().map(|&p| f64::from(p) - mean).collect();
        for &(dx, dy, r) in &offsets {
            let (xs, xe) = if dx >= 0 {
                (0, w - dx as usize)
            } else {
                ((-dx) as usize, w)
            };
            let mut s = 0.0;
            for y in 0..h - dy as usize {
                let a = &c[y * w..(y + 1) * w];
                let b = &c[(y + dy as usize) * w..(y + dy as usize + 1) * w];
                for x in xs..xe {
                    s += a[x] * b[(x as i64 + dx) as usize];
                }
            }
            sums[r] += s;
            counts[r] += ((xe - xs) * (h - dy as usize)) as f64;
        }
    }
    let cov: Vec<f64> = sums.iter().zip(&counts).map(|(s, n)| s / n).collect();
    if cov[0] <= 0.0 {
        return Err(Error::Degenerate("ensemble has zero variance"));
    }
    Ok(cov.iter().map(|c| c / cov[0]).collect())
}

/// [`radial_autocorrelation_images`] over the images of a manifest.
pub fn radial_autocorrelation(
    manifest: &EnsembleManifest,
    base_dir: &Path,
    max_lag: usize,
    exec: Execution,
) -> Result<Vec<f64>> {
    let images = exec
        .map_slice(&manifest.entries, |_, e| {
            load_image(manifest.resolve(base_dir, e), None)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    radial_autocorrelation_images(&images, max_lag)
}
