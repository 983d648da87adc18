//! Letter-raster SOM with fixed letter frequencies and pairing rules.
//!
//! Each realization is 64 letters drawn on an 8x8 grid of 32x32 blocks.
//! Letter counts are fixed, every V directly follows an H, every Y directly
//! follows a W, and at least twelve H-Z or Z-H neighbors occur. Adjacency runs
//! along the flattened raster order, so pairs may wrap across rows.

mod glyphs;
mod validate;

pub use glyphs::{classify_letters, render_alphabet, LetterTemplate, LetterTemplates};
pub use validate::{
    frequency_test, hz_distribution, pair_prevalence, positional_error_map, FrequencyTest,
    HzSummary, PairCounts, PositionalMap, PositionalReference, MIN_REFERENCE_SIZE,
};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID: usize = 8;
pub const BLOCK: usize = 32;
pub const TOKENS: usize = GRID * GRID;
/// Uncertainty at or above this marks a token as excluded.
pub const EXCLUSION_SCORE: f64 = 12.0;
/// Upper end of the uncertainty scale.
pub const UNCERTAINTY_SCALE: f64 = 16.0;
/// Realizations with this many excluded tokens are rejected.
pub const MAX_EXCLUDED: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Letter {
    H,
    K,
    L,
    V,
    W,
    X,
    Y,
    Z,
}

impl Letter {
    pub const ALL: [Letter; 8] = [
        Letter::H,
        Letter::K,
        Letter::L,
        Letter::V,
        Letter::W,
        Letter::X,
        Letter::Y,
        Letter::Z,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_char(self) -> char {
        ['H', 'K', 'L', 'V', 'W', 'X', 'Y', 'Z'][self.index()]
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for Letter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Letter::ALL
            .iter()
            .copied()
            .find(|l| s.len() == 1 && s.eq_ignore_ascii_case(&l.to_string()))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown letter {s:?}")))
    }
}

/// Frequencies and pairing constraints of one realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphabetRules {
    /// Count per letter, indexed by [`Letter::index`].
    pub frequencies: [usize; 8],
    /// `(first, second, n)`: exactly `n` occurrences of `second`, each directly after `first`.
    pub ordered_pairs: Vec<(Letter, Letter, usize)>,
    /// At least `n` adjacent occurrences of the two letters in either order.
    pub unordered_pair: (Letter, Letter, usize),
}

impl Default for AlphabetRules {
    fn default() -> Self {
        AlphabetRules {
            frequencies: [16, 2, 1, 4, 8, 1, 8, 24],
            ordered_pairs: vec![(Letter::H, Letter::V, 4), (Letter::W, Letter::Y, 8)],
            unordered_pair: (Letter::H, Letter::Z, 12),
        }
    }
}

impl AlphabetRules {
    pub fn frequency(&self, letter: Letter) -> usize {
        self.frequencies[letter.index()]
    }

    /// Letters left for single blocks after the paired blocks are formed.
    fn singles(&self) -> Result<[usize; 8]> {
        let mut left = self.frequencies;
        let mut take = |l: Letter, n: usize| -> Result<()> {
            left[l.index()] = left[l.index()].checked_sub(n).ok_or_else(|| {
                Error::InvalidParameter(format!("pairs need more {l} than the frequencies allow"))
            })?;
            Ok(())
        };
        for &(a, b, n) in &self.ordered_pairs {
            take(a, n)?;
            take(b, n)?;
        }
        let (a, b, n) = self.unordered_pair;
        take(a, n)?;
        take(b, n)?;
        Ok(left)
    }

    pub fn validate(&self) -> Result<()> {
        let total: usize = self.frequencies.iter().sum();
        if total != TOKENS {
            return Err(Error::InvalidParameter(format!(
                "frequencies sum to {total}, not 64"
            )));
        }
        let singles = self.singles()?;
        for &(a, b, _) in &self.ordered_pairs {
            if a == b || singles[b.index()] != 0 {
                return Err(Error::InvalidParameter(format!(
                    "every {b} must follow {a}, but {b} has unpaired copies"
                )));
            }
        }
        if self.unordered_pair.0 == self.unordered_pair.1 {
            return Err(Error::InvalidParameter(
                "unordered pair needs two letters".into(),
            ));
        }
        Ok(())
    }
}

/// 64 tokens in raster order, with per-token uncertainty when recovered from an image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LetterSequence {
    pub tokens: Vec<Letter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<Vec<f64>>,
}

impl LetterSequence {
    pub fn new(tokens: Vec<Letter>) -> Result<Self> {
        if tokens.len() != TOKENS {
            return Err(Error::InvalidParameter(format!(
                "{} tokens, expected 64",
                tokens.len()
            )));
        }
        Ok(LetterSequence {
            tokens,
            uncertainty: None,
        })
    }

    /// Parses 64 letters, ignoring whitespace.
    pub fn parse(text: &str) -> Result<Self> {
        let tokens = text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| c.to_string().parse())
            .collect::<Result<Vec<Letter>>>()?;
        Self::new(tokens)
    }

    pub fn excluded(&self) -> Vec<bool> {
        match &self.uncertainty {
            Some(u) => u.iter().map(|&s| s >= EXCLUSION_SCORE).collect(),
            None => vec![false; self.tokens.len()],
        }
    }

    pub fn excluded_count(&self) -> usize {
        self.excluded().iter().filter(|&&e| e).count()
    }

    pub fn counts(&self) -> [usize; 8] {
        let mut c = [0; 8];
        for t in &self.tokens {
            c[t.index()] += 1;
        }
        c
    }
}

impl fmt::Display for LetterSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 && i % GRID == 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// Shuffles paired blocks and single letters, then flattens them.
///
/// Ordered pairs become fixed two-letter blocks, each unordered pair a
/// two-letter block in a coin-flipped order, and the remaining letters
/// single blocks. With the default rules that is 40 blocks.
pub fn arrange_sequence<R: Rng + ?Sized>(
    rules: &AlphabetRules,
    rng: &mut R,
) -> Result<LetterSequence> {
    rules.validate()?;
    let mut blocks: Vec<[Option<Letter>; 2]> = Vec::with_capacity(TOKENS);
    for &(a, b, n) in &rules.ordered_pairs {
        blocks.extend(std::iter::repeat_n([Some(a), Some(b)], n));
    }
    let (a, b, n) = rules.unordered_pair;
    for _ in 0..n {
        blocks.push(if rng.random::<bool>() {
            [Some(a), Some(b)]
        } else {
            [Some(b), Some(a)]
        });
    }
    for (k, &left) in rules.singles()?.iter().enumerate() {
        blocks.extend(std::iter::repeat_n([Some(Letter::ALL[k]), None], left));
    }
    blocks.shuffle(rng);
    LetterSequence::new(blocks.into_iter().flatten().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_stream;

    #[test]
    fn default_rules_are_consistent() {
        let r = AlphabetRules::default();
        r.validate().unwrap();
        assert_eq!(r.frequency(Letter::Z), 24);
        let singles = r.singles().unwrap();
        assert_eq!(singles.iter().sum::<usize>(), 16);
        let mut bad = r.clone();
        bad.frequencies[Letter::V.index()] = 5;
        bad.frequencies[Letter::Z.index()] = 23;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sequences_obey_all_rules() {
        let rules = AlphabetRules::default();
        let mut rng = rng_stream(1, 0);
        for _ in 0..2000 {
            let s = arrange_sequence(&rules, &mut rng).unwrap();
            assert_eq!(s.counts(), rules.frequencies);
            let p = pair_prevalence(&s);
            assert_eq!((p.hv, p.wy, p.lone_v, p.lone_y), (4, 8, 0, 0));
            assert!(p.hz_unordered >= 12);
        }
    }

    #[test]
    fn parse_and_display() {
        let text = "HVHVHVHV WYWYWYWY WYWYWYWY HZHZHZHZ HZHZHZHZ HZHZHZHZ ZZZZZZZZ KKLXZZZZ";
        let s = LetterSequence::parse(text).unwrap();
        assert_eq!(s.to_string(), text);
        assert_eq!(s.counts(), AlphabetRules::default().frequencies);
        assert!(LetterSequence::parse("HV").is_err());
        assert!(LetterSequence::parse(&"Q".repeat(64)).is_err());
    }
}
