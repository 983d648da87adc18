//! 32x32 letter glyphs, rendering and template-matching recovery.

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{load_image, save_image, GrayImage, SOM_SIZE};

use super::{Letter, LetterSequence, BLOCK, GRID, TOKENS, UNCERTAINTY_SCALE};

/// Stroke centerlines in block coordinates, y pointing down.
type Segment = ((f64, f64), (f64, f64));

const STROKE_HALF_WIDTH: f64 = 2.0;

fn strokes(letter: Letter) -> &'static [Segment] {
    match letter {
        Letter::H => &[
            ((8.0, 4.0), (8.0, 28.0)),
            ((24.0, 4.0), (24.0, 28.0)),
            ((8.0, 16.0), (24.0, 16.0)),
        ],
        Letter::K => &[
            ((8.0, 4.0), (8.0, 28.0)),
            ((24.0, 4.0), (8.0, 18.0)),
            ((13.0, 14.0), (25.0, 28.0)),
        ],
        Letter::L => &[((8.0, 4.0), (8.0, 27.0)), ((8.0, 27.0), (25.0, 27.0))],
        Letter::V => &[((6.0, 4.0), (16.0, 28.0)), ((26.0, 4.0), (16.0, 28.0))],
        Letter::W => &[
            ((4.0, 4.0), (10.0, 28.0)),
            ((10.0, 28.0), (16.0, 12.0)),
            ((16.0, 12.0), (22.0, 28.0)),
            ((22.0, 28.0), (28.0, 4.0)),
        ],
        Letter::X => &[((6.0, 4.0), (26.0, 28.0)), ((26.0, 4.0), (6.0, 28.0))],
        Letter::Y => &[
            ((6.0, 4.0), (16.0, 16.0)),
            ((26.0, 4.0), (16.0, 16.0)),
            ((16.0, 16.0), (16.0, 28.0)),
        ],
        Letter::Z => &[
            ((6.0, 5.0), (26.0, 5.0)),
            ((26.0, 5.0), (6.0, 27.0)),
            ((6.0, 27.0), (26.0, 27.0)),
        ],
    }
}

fn segment_distance(p: (f64, f64), s: Segment) -> f64 {
    let ((ax, ay), (bx, by)) = s;
    let (dx, dy) = (bx - ax, by - ay);
    let t = (((p.0 - ax) * dx + (p.1 - ay) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((p.0 - ax - t * dx).powi(2) + (p.1 - ay - t * dy).powi(2)).sqrt()
}

fn draw(letter: Letter) -> GrayImage {
    let mut g = GrayImage::new(BLOCK, BLOCK);
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            if strokes(letter)
                .iter()
                .any(|&s| segment_distance(p, s) <= STROKE_HALF_WIDTH)
            {
                g.set(x, y, 255);
            }
        }
    }
    g
}

#[derive(Clone, Debug, PartialEq)]
pub struct LetterTemplate {
    pub letter: Letter,
    /// 32x32, 255 on 0.
    pub glyph: GrayImage,
}

/// The eight glyphs plus the pairwise MAE that fixes the uncertainty scale.
#[derive(Clone, Debug, PartialEq)]
pub struct LetterTemplates {
    templates: Vec<LetterTemplate>,
    max_pair_mae: f64,
}

fn mae(a: &[u8], b: impl Iterator<Item = u8>) -> f64 {
    let (sum, n) = a.iter().zip(b).fold((0u64, 0usize), |(s, n), (&x, y)| {
        (s + u64::from(x.abs_diff(y)), n + 1)
    });
    sum as f64 / n as f64
}

impl LetterTemplates {
    /// Procedural stroke glyphs.
    pub fn builtin() -> Self {
        Self::new(
            Letter::ALL
                .iter()
                .map(|&letter| LetterTemplate {
                    letter,
                    glyph: draw(letter),
                })
                .collect(),
        )
        .expect("builtin glyphs are valid")
    }

    pub fn new(mut templates: Vec<LetterTemplate>) -> Result<Self> {
        templates.sort_by_key(|t| t.letter);
        let letters: Vec<Letter> = templates.iter().map(|t| t.letter).collect();
        if letters != Letter::ALL {
            return Err(Error::InvalidParameter(
                "need exactly one glyph per letter".into(),
            ));
        }
        for t in &templates {
            if t.glyph.dimensions() != (BLOCK, BLOCK) {
                return Err(Error::DimensionMismatch {
                    expected: (BLOCK, BLOCK),
                    found: t.glyph.dimensions(),
                });
            }
            if t.glyph.pixels().iter().all(|&p| p == 0) {
                return Err(Error::InvalidParameter(format!(
                    "glyph {} is empty",
                    t.letter
                )));
            }
        }
        let mut max_pair_mae: f64 = 0.0;
        for (i, a) in templates.iter().enumerate() {
            for b in &templates[i + 1..] {
                let d = mae(a.glyph.pixels(), b.glyph.pixels().iter().copied());
                if d == 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "glyphs {} and {} are identical",
                        a.letter, b.letter
                    )));
                }
                max_pair_mae = max_pair_mae.max(d);
            }
        }
        Ok(LetterTemplates {
            templates,
            max_pair_mae,
        })
    }

    pub fn templates(&self) -> &[LetterTemplate] {
        &self.templates
    }

    pub fn glyph(&self, letter: Letter) -> &GrayImage {
        &self.templates[letter.index()].glyph
    }

    pub fn max_pair_mae(&self) -> f64 {
        self.max_pair_mae
    }

    /// Maps a best-match MAE onto `[0, 16]`, linear up to the largest
    /// pairwise template MAE and clamped beyond.
    pub fn uncertainty(&self, mae: f64) -> f64 {
        (UNCERTAINTY_SCALE * mae / self.max_pair_mae).min(UNCERTAINTY_SCALE)
    }

    /// Writes `H.png` .. `Z.png` into `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for t in &self.templates {
            save_image(&t.glyph, dir.join(format!("{}.png", t.letter)))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let templates = Letter::ALL
            .iter()
            .map(|&letter| {
                let glyph = load_image(dir.join(format!("{letter}.png")), Some((BLOCK, BLOCK)))?;
                Ok(LetterTemplate { letter, glyph })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(templates)
    }
}

/// Draws token `k` into block `(k / 8, k % 8)` as an exact glyph copy.
pub fn render_alphabet(
    sequence: &LetterSequence,
    templates: &LetterTemplates,
) -> Result<GrayImage> {
    if sequence.tokens.len() != TOKENS {
        return Err(Error::InvalidParameter(format!(
            "{} tokens, expected 64",
            sequence.tokens.len()
        )));
    }
    let mut image = GrayImage::som_canvas();
    for (k, &letter) in sequence.tokens.iter().enumerate() {
        let (x0, y0) = ((k % GRID) * BLOCK, (k / GRID) * BLOCK);
        let glyph = templates.glyph(letter);
        for y in 0..BLOCK {
            for x in 0..BLOCK {
                image.set(x0 + x, y0 + y, glyph.get(x, y));
            }
        }
    }
    Ok(image)
}

/// Template matching per block; ties go to the earlier letter.
pub fn classify_letters(image: &GrayImage, templates: &LetterTemplates) -> Result<LetterSequence> {
    image.require_dimensions(SOM_SIZE, SOM_SIZE)?;
    let grid = crate::raster::split_tiles(image, BLOCK)?;
    let mut tokens = Vec::with_capacity(TOKENS);
    let mut uncertainty = Vec::with_capacity(TOKENS);
    for tile in grid.tiles() {
        let (best, d) = templates
            .templates()
            .iter()
            .map(|t| (t.letter, mae(t.glyph.pixels(), tile.pixels())))
            .fold((Letter::H, f64::INFINITY), |acc, cur| {
                if cur.1 < acc.1 {
                    cur
                } else {
                    acc
                }
            });
        tokens.push(best);
        uncertainty.push(templates.uncertainty(d));
    }
    Ok(LetterSequence {
        tokens,
        uncertainty: Some(uncertainty),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::{arrange_sequence, pair_prevalence, AlphabetRules};
    use crate::rng::rng_stream;
    use rand::Rng;

    #[test]
    fn glyphs_are_distinct_and_far_apart() {
        let t = LetterTemplates::builtin();
        for (i, a) in t.templates().iter().enumerate() {
            assert!(a.glyph.pixels().iter().all(|&p| p == 0 || p == 255));
            for b in &t.templates()[i + 1..] {
                let diff = a
                    .glyph
                    .pixels()
                    .iter()
                    .zip(b.glyph.pixels())
                    .filter(|(x, y)| x != y)
                    .count();
                // Enough separation that 5% pixel flips cannot change the best match.
                assert!(diff > 2 * 52, "{} vs {}: {diff}", a.letter, b.letter);
            }
        }
    }

    #[test]
    fn shipped_glyph_pngs_match_builtin() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/glyphs");
        assert_eq!(
            LetterTemplates::load_dir(dir).unwrap(),
            LetterTemplates::builtin()
        );
    }

    #[test]
    fn uncertainty_scale() {
        let t = LetterTemplates::builtin();
        assert_eq!(t.uncertainty(0.0), 0.0);
        assert_eq!(t.uncertainty(t.max_pair_mae()), 16.0);
        assert_eq!(t.uncertainty(10.0 * t.max_pair_mae()), 16.0);
        assert!(t.uncertainty(1.0) < t.uncertainty(1.5));
    }

    #[test]
    fn round_trip_is_identity() {
        let t = LetterTemplates::builtin();
        let rules = AlphabetRules::default();
        for seed in 0..50 {
            let s = arrange_sequence(&rules, &mut rng_stream(seed, 0)).unwrap();
            let back = classify_letters(&render_alphabet(&s, &t).unwrap(), &t).unwrap();
            assert_eq!(back.tokens, s.tokens);
            assert!(back.uncertainty.as_ref().unwrap().iter().all(|&u| u == 0.0));
            assert_eq!(pair_prevalence(&back), pair_prevalence(&s));
        }
    }

    #[test]
    fn all_z_renders_identical_blocks() {
        let t = LetterTemplates::builtin();
        let im = render_alphabet(&LetterSequence::new(vec![Letter::Z; 64]).unwrap(), &t).unwrap();
        let grid = crate::raster::split_tiles(&im, BLOCK).unwrap();
        let first = grid.tile(0, 0).to_vec();
        assert!(grid.tiles().all(|tile| tile.to_vec() == first));
    }

    #[test]
    fn noise_and_flips() {
        let t = LetterTemplates::builtin();
        let mut rng = rng_stream(5, 0);
        let mut s = LetterSequence::new(vec![Letter::H; 64]).unwrap();
        s.tokens[0] = Letter::W;
        let mut im = render_alphabet(&s, &t).unwrap();
        // Uniform noise in block 0.
        for y in 0..BLOCK {
            for x in 0..BLOCK {
                im.set(x, y, rng.random());
            }
        }
        // Flip 5% of the pixels of every other block.
        for k in 1..TOKENS {
            let (x0, y0) = ((k % GRID) * BLOCK, (k / GRID) * BLOCK);
            let picks = rand::seq::index::sample(&mut rng, BLOCK * BLOCK, 51);
            for p in picks {
                let (x, y) = (x0 + p % BLOCK, y0 + p / BLOCK);
                im.set(x, y, 255 - im.get(x, y));
            }
        }
        let back = classify_letters(&im, &t).unwrap();
        let u = back.uncertainty.as_ref().unwrap();
        assert!(u[0] >= 12.0);
        assert!(back.excluded()[0]);
        for k in 1..TOKENS {
            assert_eq!(back.tokens[k], Letter::H);
            assert!(u[k] < 12.0 && u[k] > 0.0);
        }
        assert_eq!(back.excluded_count(), 1);
    }

    #[test]
    fn malformed_template_sets() {
        let mut ts = LetterTemplates::builtin().templates().to_vec();
        ts[1].glyph = ts[0].glyph.clone();
        assert!(LetterTemplates::new(ts.clone()).is_err());
        ts.pop();
        assert!(LetterTemplates::new(ts).is_err());
    }
}
