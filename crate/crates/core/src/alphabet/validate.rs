//! Frequency, pairing and positional checks on letter sequences.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{chi_square_critical, mean_std};

use super::{AlphabetRules, Letter, LetterSequence, GRID, MAX_EXCLUDED, TOKENS};

/// Smallest reference ensemble accepted by [`positional_error_map`].
pub const MIN_REFERENCE_SIZE: usize = 10_000;

fn check_excluded(sequence: &LetterSequence) -> Result<usize> {
    let n = sequence.excluded_count();
    if n >= MAX_EXCLUDED {
        return Err(Error::TooManyExcluded(n));
    }
    Ok(n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTest {
    pub chi2: f64,
    pub exact_match: bool,
}

/// Pearson chi-square of the letter counts against the prescribed ones.
///
/// Excluded tokens are left out and the prescription is scaled to the
/// remaining count; `exact_match` requires no exclusions.
pub fn frequency_test(sequence: &LetterSequence, rules: &AlphabetRules) -> Result<FrequencyTest> {
    let excluded = check_excluded(sequence)?;
    let mut observed = [0usize; 8];
    for (t, ex) in sequence.tokens.iter().zip(sequence.excluded()) {
        if !ex {
            observed[t.index()] += 1;
        }
    }
    let scale = (TOKENS - excluded) as f64 / TOKENS as f64;
    let chi2 = observed
        .iter()
        .zip(&rules.frequencies)
        .filter(|(_, &f)| f > 0)
        .map(|(&o, &f)| {
            let e = f as f64 * scale;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    Ok(FrequencyTest {
        chi2,
        exact_match: excluded == 0 && observed == rules.frequencies,
    })
}

/// Adjacency counts along the flattened raster order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub hv: usize,
    pub wy: usize,
    pub hz_unordered: usize,
    /// V tokens not directly preceded by H.
    pub lone_v: usize,
    /// Y tokens not directly preceded by W.
    pub lone_y: usize,
}

pub fn pair_prevalence(sequence: &LetterSequence) -> PairCounts {
    use Letter::*;
    let t = &sequence.tokens;
    let mut c = PairCounts {
        hv: 0,
        wy: 0,
        hz_unordered: 0,
        lone_v: 0,
        lone_y: 0,
    };
    for i in 0..t.len() {
        let prev = i.checked_sub(1).map(|j| t[j]);
        match (prev, t[i]) {
            (Some(H), V) => c.hv += 1,
            (_, V) => c.lone_v += 1,
            (Some(W), Y) => c.wy += 1,
            (_, Y) => c.lone_y += 1,
            (Some(H), Z) | (Some(Z), H) => c.hz_unordered += 1,
            _ => {}
        }
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HzSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
    pub min: usize,
    pub max: usize,
    /// Realizations with fewer adjacent H-Z pairs than the rules demand.
    pub violations: usize,
}

pub fn hz_distribution(sequences: &[LetterSequence], rules: &AlphabetRules) -> Result<HzSummary> {
    if sequences.is_empty() {
        return Err(Error::EmptyInput("no sequences"));
    }
    let counts: Vec<usize> = sequences
        .iter()
        .map(|s| pair_prevalence(s).hz_unordered)
        .collect();
    let as_f64: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let (mean, std_dev) = mean_std(&as_f64).expect("non-empty");
    Ok(HzSummary {
        mean,
        std_dev,
        min: *counts.iter().min().unwrap(),
        max: *counts.iter().max().unwrap(),
        violations: counts
            .iter()
            .filter(|&&c| c < rules.unordered_pair.2)
            .count(),
    })
}

/// Letter counts at each of the 64 grid positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionalReference {
    pub counts: Vec<[u64; 8]>,
    pub realizations: usize,
}

impl PositionalReference {
    pub fn from_sequences<'a>(sequences: impl IntoIterator<Item = &'a LetterSequence>) -> Self {
        let mut r = PositionalReference {
            counts: vec![[0; 8]; TOKENS],
            realizations: 0,
        };
        for s in sequences {
            r.add(s);
        }
        r
    }

    pub fn add(&mut self, sequence: &LetterSequence) {
        for (cell, t) in self.counts.iter_mut().zip(&sequence.tokens) {
            cell[t.index()] += 1;
        }
        self.realizations += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionalMap {
    /// Row-major 8x8 chi-square statistics.
    pub chi2: Vec<f64>,
    pub dof: Vec<usize>,
}

impl PositionalMap {
    /// Cells whose statistic exceeds the `p` quantile of chi-square with
    /// that cell's degrees of freedom.
    pub fn exceedances(&self, p: f64) -> Vec<bool> {
        self.chi2
            .iter()
            .zip(&self.dof)
            .map(|(&c, &d)| d > 0 && c > chi_square_critical(d, p))
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for row in self.chi2.chunks(GRID) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Per-position two-sample chi-square homogeneity test of the recovered
/// letter distribution against the reference ensemble. Letters absent from
/// both samples at a position drop out of that cell's table.
pub fn positional_error_map(
    recovered: &[LetterSequence],
    reference: &PositionalReference,
    min_reference: usize,
) -> Result<PositionalMap> {
    if recovered.is_empty() {
        return Err(Error::EmptyInput("no recovered sequences"));
    }
    if reference.realizations < min_reference {
        return Err(Error::InsufficientData {
            needed: min_reference,
            got: reference.realizations,
        });
    }
    let observed = PositionalReference::from_sequences(recovered);
    let (na, nb) = (observed.realizations as f64, reference.realizations as f64);
    let mut chi2 = Vec::with_capacity(TOKENS);
    let mut dof = Vec::with_capacity(TOKENS);
    for (a, b) in observed.counts.iter().zip(&reference.counts) {
        let mut stat = 0.0;
        let mut used = 0;
        for k in 0..8 {
            let total = (a[k] + b[k]) as f64;
            if total == 0.0 {
                continue;
            }
            used += 1;
            let ea = total * na / (na + nb);
            let eb = total * nb / (na + nb);
            stat += (a[k] as f64 - ea).powi(2) / ea + (b[k] as f64 - eb).powi(2) / eb;
        }
        chi2.push(stat);
        dof.push(used.max(1) - 1);
    }
    Ok(PositionalMap { chi2, dof })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::arrange_sequence;
    use crate::rng::rng_stream;

    fn true_sequences(n: usize, seed: u64) -> Vec<LetterSequence> {
        let rules = AlphabetRules::default();
        let mut rng = rng_stream(seed, 0);
        (0..n)
            .map(|_| arrange_sequence(&rules, &mut rng).unwrap())
            .collect()
    }

    #[test]
    fn frequency_test_cases() {
        let rules = AlphabetRules::default();
        let s = &true_sequences(1, 1)[0];
        assert_eq!(
            frequency_test(s, &rules).unwrap(),
            FrequencyTest {
                chi2: 0.0,
                exact_match: true
            }
        );
        let mut swapped = s.clone();
        let i = swapped.tokens.iter().position(|&t| t == Letter::H).unwrap();
        swapped.tokens[i] = Letter::Z;
        let f = frequency_test(&swapped, &rules).unwrap();
        assert!((f.chi2 - (1.0 / 16.0 + 1.0 / 24.0)).abs() < 1e-12);
        assert!(!f.exact_match);
        let mut bad = s.clone();
        bad.uncertainty = Some((0..64).map(|k| if k < 8 { 13.0 } else { 0.0 }).collect());
        assert!(matches!(
            frequency_test(&bad, &rules),
            Err(Error::TooManyExcluded(8))
        ));
    }

    #[test]
    fn pair_counts_by_hand() {
        let s = LetterSequence::parse(&format!("HVHV{}", "K".repeat(60))).unwrap();
        let p = pair_prevalence(&s);
        assert_eq!((p.hv, p.lone_v), (2, 0));
        // H at the end of row 0 and Z at the start of row 1 still touch.
        let s =
            LetterSequence::parse(&format!("{}H{}Z{}", "K".repeat(7), "", "K".repeat(55))).unwrap();
        assert_eq!(pair_prevalence(&s).hz_unordered, 1);
        let s = LetterSequence::parse(&format!("V{}Y", "K".repeat(62))).unwrap();
        let p = pair_prevalence(&s);
        assert_eq!((p.lone_v, p.lone_y, p.hv, p.wy), (1, 1, 0, 0));
    }

    #[test]
    fn hz_summary() {
        let rules = AlphabetRules::default();
        let s = true_sequences(1, 9).remove(0);
        let c = pair_prevalence(&s).hz_unordered;
        let h = hz_distribution(&[s.clone(), s.clone(), s], &rules).unwrap();
        assert_eq!((h.mean, h.std_dev, h.min, h.max), (c as f64, 0.0, c, c));
        let ens = true_sequences(500, 2);
        let h = hz_distribution(&ens, &rules).unwrap();
        assert!(h.min >= 12 && h.violations == 0);
        assert!(hz_distribution(&[], &rules).is_err());
    }

    #[test]
    fn positional_map_detects_a_streak() {
        let reference = PositionalReference::from_sequences(&true_sequences(10_000, 3));
        let mut recovered = true_sequences(2_000, 4);
        for s in &mut recovered {
            for row in 0..GRID {
                s.tokens[row * GRID + 7] = Letter::Z;
            }
        }
        let map = positional_error_map(&recovered, &reference, MIN_REFERENCE_SIZE).unwrap();
        let hot = map.exceedances(0.99);
        let streak_min = (0..GRID)
            .map(|r| map.chi2[r * GRID + 7])
            .fold(f64::INFINITY, f64::min);
        for (k, &c) in map.chi2.iter().enumerate() {
            if k % GRID == 7 {
                assert!(hot[k]);
            } else {
                assert!(c < streak_min / 10.0, "cell {k}: {c} vs {streak_min}");
            }
        }
        assert!(positional_error_map(&[], &reference, 1).is_err());
        assert!(matches!(
            positional_error_map(&recovered, &reference, 20_000),
            Err(Error::InsufficientData { .. })
        ));
    }
}
