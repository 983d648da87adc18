//! Pearson chi-square goodness of fit with small-expectation bin merging.

use crate::error::{Error, Result};
use crate::stats::histogram::Histogram;

/// Bins whose expected count falls below this are merged with their neighbours.
pub const MIN_EXPECTED: f64 = 5.0;

/// Reference distribution for [`chi_square_gof`].
#[derive(Clone, Copy, Debug)]
pub enum Expected<'a> {
    /// A histogram with the same binning, rescaled to the observed total.
    Counts(&'a Histogram),
    /// Bin probabilities (need not be normalized).
    Probabilities(&'a [f64]),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub retained_bins: usize,
}

impl ChiSquare {
    pub fn degrees_of_freedom(&self) -> usize {
        self.retained_bins.saturating_sub(1)
    }
}

pub fn chi_square_gof(observed: &Histogram, expected: Expected<'_>) -> Result<ChiSquare> {
    let total = observed.total();
    if total == 0 {
        return Err(Error::EmptyInput("observed histogram has no counts"));
    }
    let weights: Vec<f64> = match expected {
        Expected::Counts(h) => {
            if !observed.same_binning(h) {
                return Err(Error::IncompatibleBinning("edges differ".into()));
            }
            h.counts().iter().map(|&c| c as f64).collect()
        }
        Expected::Probabilities(p) => {
            if p.len() != observed.bins() {
                return Err(Error::IncompatibleBinning(format!(
                    "{} probabilities for {} bins",
                    p.len(),
                    observed.bins()
                )));
            }
            p.to_vec()
        }
    };
    let mass: f64 = weights.iter().sum();
    if !(mass > 0.0) || weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidParameter(
            "expected distribution has no mass".into(),
        ));
    }
    let scale = total as f64 / mass;
    let obs: Vec<f64> = observed.counts().iter().map(|&c| c as f64).collect();
    let exp: Vec<f64> = weights.iter().map(|w| w * scale).collect();
    let (obs, exp) = merge_small_bins(&obs, &exp, MIN_EXPECTED);
    Ok(ChiSquare {
        statistic: pearson_statistic(&obs, &exp),
        retained_bins: obs.len(),
    })
}

/// Sweeps left to right, closing a group once its expectation reaches `min`;
/// an under-filled tail joins the last closed group.
pub(crate) fn merge_small_bins(obs: &[f64], exp: &[f64], min: f64) -> (Vec<f64>, Vec<f64>) {
    let (mut mo, mut me) = (Vec::new(), Vec::new());
    let (mut o, mut e) = (0.0, 0.0);
    for (&oi, &ei) in obs.iter().zip(exp) {
        o += oi;
        e += ei;
        if e >= min {
            mo.push(o);
            me.push(e);
            o = 0.0;
            e = 0.0;
        }
    }
    if o > 0.0 || e > 0.0 {
        match (mo.last_mut(), me.last_mut()) {
            (Some(lo), Some(le)) => {
                *lo += o;
                *le += e;
            }
            _ => {
                mo.push(o);
                me.push(e);
            }
        }
    }
    (mo, me)
}

/// `sum (O - E)^2 / E` over bins with positive expectation.
pub fn pearson_statistic(observed: &[f64], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(counts: &[u64]) -> Histogram {
        let edges = (0..=counts.len()).map(|k| k as f64).collect();
        Histogram::from_counts(edges, counts.to_vec()).unwrap()
    }

    #[test]
    fn identical_histograms_give_zero() {
        let h = hist(&[10, 30, 25, 7]);
        assert_eq!(
            chi_square_gof(&h, Expected::Counts(&h)).unwrap().statistic,
            0.0
        );
    }

    #[test]
    fn hand_computed_two_bin_case() {
        let stat = chi_square_gof(&hist(&[10, 20]), Expected::Counts(&hist(&[15, 15])))
            .unwrap()
            .statistic;
        assert!((stat - 50.0 / 15.0).abs() < 1e-12);
        // Rescaling: the expected histogram total does not matter.
        let stat2 = chi_square_gof(&hist(&[10, 20]), Expected::Counts(&hist(&[1, 1])))
            .unwrap()
            .statistic;
        assert!((stat - stat2).abs() < 1e-12);
    }

    #[test]
    fn small_bins_merge() {
        let (o, e) = merge_small_bins(&[1.0, 2.0, 10.0, 5.0, 1.0], &[1.0, 3.0, 9.0, 6.0, 2.0], 5.0);
        assert_eq!(o, vec![13.0, 6.0]);
        assert_eq!(e, vec![13.0, 8.0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            chi_square_gof(&hist(&[0, 0]), Expected::Counts(&hist(&[1, 1]))),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            chi_square_gof(&hist(&[1, 2]), Expected::Counts(&hist(&[1, 1, 1]))),
            Err(Error::IncompatibleBinning(_))
        ));
    }
}
