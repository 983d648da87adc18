//! Post-hoc region recovery: Hessian boundary mask, morphology, flood fill
//! and seeded watershed.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::raster::GrayImage;
use crate::stats::calibration::percentile;

use super::{RegionMap, RegionRecord};

/// How the eigenvalue-magnitude threshold is chosen for each image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HessianThreshold {
    Absolute {
        value: f64,
    },
    /// A per-image quantile of the eigenvalue magnitudes, `p` in (0, 1).
    Percentile {
        p: f64,
    },
    /// `max(floor, k * median)` of the eigenvalue magnitudes. The median term
    /// tracks pixel-level noise; on clean images it is zero and the floor applies.
    Adaptive {
        floor: f64,
        k: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Gaussian scale of the derivative filters, in pixels.
    pub sigma_h: f64,
    pub threshold: HessianThreshold,
    /// Radius of the square structuring element used to erode the region
    /// (non-boundary) mask before skeletonization.
    pub erosion_radius: usize,
    /// Flood-fill components smaller than this are returned to the boundary set.
    pub min_region_area: usize,
    /// Neighboring basins whose medians differ by at most this are merged
    /// after the watershed; negative disables merging.
    pub merge_tolerance: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            sigma_h: 1.0,
            threshold: HessianThreshold::Adaptive { floor: 0.2, k: 4.0 },
            erosion_radius: 1,
            min_region_area: 12,
            merge_tolerance: 1.0,
        }
    }
}

fn gaussian_kernels(sigma: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let radius = (4.0 * sigma).ceil().max(1.0) as i64;
    let xs: Vec<f64> = (-radius..=radius).map(|i| i as f64).collect();
    let s2 = sigma * sigma;
    let mut g: Vec<f64> = xs.iter().map(|x| (-x * x / (2.0 * s2)).exp()).collect();
    let norm: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= norm);
    // d/dx and d2/dx2 of the normalized Gaussian, sampled.
    let mut g1: Vec<f64> = xs.iter().zip(&g).map(|(x, v)| -x / s2 * v).collect();
    let mut g2: Vec<f64> = xs
        .iter()
        .zip(&g)
        .map(|(x, v)| (x * x - s2) / (s2 * s2) * v)
        .collect();
    // Exact on low-order polynomials: g1 sends a unit ramp to -1 (it only
    // enters squared), g2 kills constants and sends x^2/2 to 1.
    let m1: f64 = xs.iter().zip(&g1).map(|(x, v)| -x * v).sum();
    g1.iter_mut().for_each(|v| *v /= m1);
    let mean2: f64 = g2.iter().sum::<f64>() / g2.len() as f64;
    g2.iter_mut().for_each(|v| *v -= mean2);
    let m2: f64 = xs.iter().zip(&g2).map(|(x, v)| 0.5 * x * x * v).sum();
    g2.iter_mut().for_each(|v| *v /= m2);
    (g, g1, g2)
}

#[inline]
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Correlates rows with `kx` then columns with `ky`, reflecting at the borders.
fn separable(src: &[f64], w: usize, h: usize, kx: &[f64], ky: &[f64]) -> Vec<f64> {
    let rx = (kx.len() / 2) as i64;
    let ry = (ky.len() / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &c) in kx.iter().enumerate() {
                acc += c * row[reflect(x as i64 + k as i64 - rx, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (k, &c) in ky.iter().enumerate() {
            let sy = reflect(y as i64 + k as i64 - ry, h);
            let (dst, srow) = (&mut out[y * w..(y + 1) * w], &tmp[sy * w..(sy + 1) * w]);
            for (d, s) in dst.iter_mut().zip(srow) {
                *d += c * s;
            }
        }
    }
    out
}

/// Per-pixel magnitude of the largest-magnitude Hessian eigenvalue.
pub(crate) fn hessian_magnitude(image: &GrayImage, sigma: f64) -> Vec<f64> {
    let (w, h) = image.dimensions();
    let src = image.to_f64();
    let (g, g1, g2) = gaussian_kernels(sigma);
    let hxx = separable(&src, w, h, &g2, &g);
    let hyy = separable(&src, w, h, &g, &g2);
    let hxy = separable(&src, w, h, &g1, &g1);
    hxx.iter()
        .zip(&hyy)
        .zip(&hxy)
        .map(|((&a, &c), &b)| {
            let mid = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            (mid + rad).abs().max((mid - rad).abs())
        })
        .collect()
}

fn threshold_value(mag: &[f64], rule: HessianThreshold) -> f64 {
    match rule {
        HessianThreshold::Absolute { value } => value,
        HessianThreshold::Percentile { p } => percentile(mag, p).unwrap_or(f64::INFINITY),
        HessianThreshold::Adaptive { floor, k } => {
            let med = percentile(mag, 0.5).unwrap_or(0.0);
            floor.max(k * med)
        }
    }
}

/// Grows `mask` by a square of the given radius (erodes its complement).
fn dilate(mask: &[bool], w: usize, h: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let mut rows = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(radius), (x + radius).min(w - 1));
            rows[y * w + x] = mask[y * w + lo..=y * w + hi].iter().any(|&b| b);
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(radius), (y + radius).min(h - 1));
        for x in 0..w {
            out[y * w + x] = (lo..=hi).any(|yy| rows[yy * w + x]);
        }
    }
    out
}

/// Zhang-Suen thinning. The mask is reflected by `pad` pixels first so lines
/// meeting the image border keep their ends on the border.
fn skeletonize(mask: &[bool], w: usize, h: usize, pad: usize) -> Vec<bool> {
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    let mut m = vec![0u8; pw * ph];
    for y in 0..ph {
        for x in 0..pw {
            let sx = reflect(x as i64 - pad as i64, w);
            let sy = reflect(y as i64 - pad as i64, h);
            m[y * pw + x] = mask[sy * w + sx] as u8;
        }
    }
    let mut remove = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            remove.clear();
            for y in 1..ph - 1 {
                for x in 1..pw - 1 {
                    if m[y * pw + x] == 0 {
                        continue;
                    }
                    let at = |dx: i64, dy: i64| {
                        m[(y as i64 + dy) as usize * pw + (x as i64 + dx) as usize]
                    };
                    // P2..P9 clockwise from north.
                    let p = [
                        at(0, -1),
                        at(1, -1),
                        at(1, 0),
                        at(1, 1),
                        at(0, 1),
                        at(-1, 1),
                        at(-1, 0),
                        at(-1, -1),
                    ];
                    let b: u8 = p.iter().sum();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| p[i] == 0 && p[(i + 1) % 8] == 1).count();
                    if a != 1 {
                        continue;
                    }
                    let (c1, c2) = if pass == 0 {
                        (p[0] * p[2] * p[4], p[2] * p[4] * p[6])
                    } else {
                        (p[0] * p[2] * p[6], p[0] * p[4] * p[6])
                    };
                    if c1 == 0 && c2 == 0 {
                        remove.push(y * pw + x);
                    }
                }
            }
            for &i in &remove {
                m[i] = 0;
            }
            changed |= !remove.is_empty();
        }
        if !changed {
            break;
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = m[(y + pad) * pw + x + pad] == 1;
        }
    }
    out
}

fn neighbors4(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    [
        (x > 0).then(|| i - 1),
        (x + 1 < w).then(|| i + 1),
        (y > 0).then(|| i - w),
        (y + 1 < h).then(|| i + w),
    ]
    .into_iter()
    .flatten()
}

/// 4-connected components of unmasked pixels; small ones are left at 0.
fn flood_fill(blocked: &[bool], w: usize, h: usize, min_area: usize) -> (Vec<u32>, usize) {
    let mut labels = vec![0u32; w * h];
    let mut seen = vec![false; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    let mut members = Vec::new();
    for start in 0..w * h {
        if blocked[start] || seen[start] {
            continue;
        }
        members.clear();
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            members.push(i);
            for j in neighbors4(i, w, h) {
                if !blocked[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if members.len() >= min_area.max(1) {
            next += 1;
            for &i in &members {
                labels[i] = next;
            }
        }
    }
    (labels, next as usize)
}

fn median_of_levels(hist: &[u64; 256]) -> f64 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let level_at = |rank: u64| {
        let mut acc = 0;
        for (v, &c) in hist.iter().enumerate() {
            acc += c;
            if acc > rank {
                return v as f64;
            }
        }
        255.0
    };
    if total % 2 == 1 {
        level_at(total / 2)
    } else {
        0.5 * (level_at(total / 2 - 1) + level_at(total / 2))
    }
}

/// Seeded region growing: unlabeled pixels join the neighboring basin whose
/// median is closest in intensity, cheapest first, FIFO among equal costs.
fn watershed(image: &GrayImage, labels: &mut [u32], count: usize) {
    let (w, h) = image.dimensions();
    let px = image.pixels();
    let mut hist = vec![[0u64; 256]; count + 1];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            hist[l as usize][usize::from(px[i])] += 1;
        }
    }
    // Doubled medians keep costs integral.
    let med2: Vec<i64> = hist
        .iter()
        .map(|hh| (2.0 * median_of_levels(hh)) as i64)
        .collect();
    let cost = |i: usize, l: u32| (2 * i64::from(px[i]) - med2[l as usize]).unsigned_abs();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for i in 0..w * h {
        if labels[i] != 0 {
            continue;
        }
        for j in neighbors4(i, w, h) {
            let l = labels[j];
            if l != 0 {
                heap.push(Reverse((cost(i, l), seq, i, l)));
                seq += 1;
            }
        }
    }
    while let Some(Reverse((_, _, i, l))) = heap.pop() {
        if labels[i] != 0 {
            continue;
        }
        labels[i] = l;
        for j in neighbors4(i, w, h) {
            if labels[j] == 0 {
                heap.push(Reverse((cost(j, l), seq, j, l)));
                seq += 1;
            }
        }
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Joins touching basins with near-equal medians and relabels `1..=k`.
fn merge_similar(image: &GrayImage, labels: &mut [u32], count: usize, tolerance: f64) -> usize {
    let (w, h) = image.dimensions();
    let mut hist = vec![[0u64; 256]; count + 1];
    for (&l, &p) in labels.iter().zip(image.pixels()) {
        hist[l as usize][usize::from(p)] += 1;
    }
    let med: Vec<f64> = hist.iter().map(median_of_levels).collect();
    let mut parent: Vec<usize> = (0..=count).collect();
    for y in 0..h {
        for x in 0..w {
            let a = labels[y * w + x] as usize;
            for b in [
                (x + 1 < w).then(|| labels[y * w + x + 1]),
                (y + 1 < h).then(|| labels[(y + 1) * w + x]),
            ]
            .into_iter()
            .flatten()
            {
                let b = b as usize;
                if a != b && (med[a] - med[b]).abs() <= tolerance {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }
    }
    let mut new_label = vec![0u32; count + 1];
    let mut next = 0;
    for l in 1..=count {
        let r = find(&mut parent, l);
        if new_label[r] == 0 {
            next += 1;
            new_label[r] = next;
        }
        new_label[l] = new_label[r];
    }
    for l in labels.iter_mut() {
        *l = new_label[*l as usize];
    }
    next as usize
}

/// Recovers the region partition of a piecewise-constant image.
///
/// Never fails: an image with no usable interior comes back as one region.
pub fn detect_regions(image: &GrayImage, config: &DetectionConfig) -> RegionMap {
    let (w, h) = image.dimensions();
    let mag = hessian_magnitude(image, config.sigma_h);
    let tau = threshold_value(&mag, config.threshold);
    let mask: Vec<bool> = mag.iter().map(|&m| m > tau).collect();
    let thick = dilate(&mask, w, h, config.erosion_radius);
    let skeleton = skeletonize(&thick, w, h, 2 * config.erosion_radius + 2);
    let (mut labels, mut count) = flood_fill(&skeleton, w, h, config.min_region_area);
    if count == 0 {
        labels.iter_mut().for_each(|l| *l = 1);
        count = 1;
    } else {
        watershed(image, &mut labels, count);
        if config.merge_tolerance >= 0.0 {
            count = merge_similar(image, &mut labels, count, config.merge_tolerance);
        }
    }

    let mut hist = vec![[0u64; 256]; count + 1];
    for (&l, &p) in labels.iter().zip(image.pixels()) {
        hist[l as usize][usize::from(p)] += 1;
    }
    let regions = (1..=count)
        .map(|l| RegionRecord {
            label: l as u32,
            area: hist[l].iter().sum::<u64>() as usize,
            shade: median_of_levels(&hist[l]),
            exact_area: None,
        })
        .collect();
    RegionMap {
        width: w,
        height: h,
        labels,
        regions,
    }
}
