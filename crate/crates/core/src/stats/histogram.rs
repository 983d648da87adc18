use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts over half-open bins `[e_k, e_{k+1})`; the last bin also includes its upper edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
}

impl Histogram {
    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Self {
        assert!(bins > 0 && hi > lo, "invalid uniform binning");
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
        Histogram {
            edges,
            counts: vec![0; bins],
        }
    }

    pub fn with_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::IncompatibleBinning(
                "edges must be strictly increasing with at least one bin".into(),
            ));
        }
        let bins = edges.len() - 1;
        Ok(Histogram {
            edges,
            counts: vec![0; bins],
        })
    }

    pub fn from_counts(edges: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        let mut h = Histogram::with_edges(edges)?;
        if counts.len() != h.bins() {
            return Err(Error::IncompatibleBinning(format!(
                "{} counts for {} bins",
                counts.len(),
                h.bins()
            )));
        }
        h.counts = counts;
        Ok(h)
    }

    /// One bin per integer level `lo..=hi`.
    pub fn integer_levels(lo: u8, hi: u8) -> Self {
        Histogram::uniform(
            f64::from(lo) - 0.5,
            f64::from(hi) + 0.5,
            usize::from(hi - lo) + 1,
        )
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_of(&self, v: f64) -> Option<usize> {
        let last = *self.edges.last()?;
        if v < self.edges[0] || v > last || v.is_nan() {
            return None;
        }
        let k = self.edges.partition_point(|&e| e <= v);
        Some(k.saturating_sub(1).min(self.bins() - 1))
    }

    /// Adds `v`; returns false when it falls outside every bin.
    pub fn add(&mut self, v: f64) -> bool {
        match self.bin_of(v) {
            Some(k) => {
                self.counts[k] += 1;
                true
            }
            None => false,
        }
    }

    pub fn extend<I: IntoIterator<Item = f64>>(&mut self, values: I) {
        for v in values {
            self.add(v);
        }
    }

    pub fn same_binning(&self, other: &Histogram) -> bool {
        self.edges.len() == other.edges.len()
            && self
                .edges
                .iter()
                .zip(&other.edges)
                .all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_are_half_open_with_closed_end() {
        let mut h = Histogram::uniform(0.0, 4.0, 4);
        for v in [0.0, 0.99, 1.0, 3.5, 4.0, 4.01, -0.1] {
            h.add(v);
        }
        assert_eq!(h.counts(), &[2, 1, 0, 2]);
        assert!(Histogram::with_edges(vec![0.0, 1.0, 1.0]).is_err());
    }
}
