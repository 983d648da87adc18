//! Four-parameter scaled Beta distributions quantized to 8-bit intensities.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::stats::histogram::Histogram;

/// `lambda + sigma * B` with `B ~ Beta(alpha, beta)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaSpec {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub sigma: f64,
}

impl BetaSpec {
    /// Flags SOM foreground intensities.
    pub const FOREGROUND: BetaSpec = BetaSpec::new(4.0, 2.0, 96.0, 152.0);
    /// Flags SOM background intensities.
    pub const BACKGROUND: BetaSpec = BetaSpec::new(2.0, 4.0, 8.0, 192.0);

    pub const fn new(alpha: f64, beta: f64, lambda: f64, sigma: f64) -> Self {
        BetaSpec {
            alpha,
            beta,
            lambda,
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.beta, self.lambda, self.sigma]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "beta shapes must be positive and finite: {self:?}"
            )));
        }
        if self.lambda < 0.0 || self.lambda + self.sigma > 256.0 || self.sigma < 2.0 {
            return Err(Error::InvalidParameter(format!(
                "scaled support must sit inside [0, 256] and span at least 2 levels: {self:?}"
            )));
        }
        Ok(())
    }

    /// Mean of the continuous scaled distribution.
    pub fn mean(&self) -> f64 {
        self.lambda + self.sigma * self.alpha / (self.alpha + self.beta)
    }

    /// Variance of the continuous scaled distribution.
    pub fn variance(&self) -> f64 {
        let (a, b) = (self.alpha, self.beta);
        self.sigma * self.sigma * a * b / ((a + b) * (a + b) * (a + b + 1.0))
    }

    /// CDF of the continuous scaled variable at intensity `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        let t = (x - self.lambda) / self.sigma;
        if t <= 0.0 {
            0.0
        } else if t >= 1.0 {
            1.0
        } else {
            beta_reg(self.alpha, self.beta, t)
        }
    }

    /// Integer support after quantization: the open interval `(lambda, lambda + sigma)`
    /// rounded inward, i.e. `[lambda + 1, lambda + sigma - 1]` for integral parameters.
    pub fn support(&self) -> (u8, u8) {
        let lo = self.lambda.floor() + 1.0;
        let hi = (self.lambda + self.sigma).ceil() - 1.0;
        (lo.clamp(0.0, 255.0) as u8, hi.clamp(0.0, 255.0) as u8)
    }
}

/// Inverse-CDF sampler for `round(lambda + sigma * B)`, clamped to [`BetaSpec::support`].
///
/// Rounding is monotone, so the rounded value of the continuous inverse CDF at
/// `u` is the first integer whose upper half-level boundary has CDF above `u`.
/// The table stores those boundary CDF values, so a draw is one uniform variate
/// and a binary search.
#[derive(Clone, Debug)]
pub struct ScaledBetaSampler {
    spec: BetaSpec,
    lo: u8,
    /// `cumulative[k]` = P(value <= lo + k).
    cumulative: Vec<f64>,
    pmf: Vec<f64>,
}

impl ScaledBetaSampler {
    pub fn new(spec: BetaSpec) -> Result<Self> {
        spec.validate()?;
        let (lo, hi) = spec.support();
        if lo > hi {
            return Err(Error::InvalidParameter(format!(
                "empty support for {spec:?}"
            )));
        }
        let mut cumulative: Vec<f64> = (lo..hi).map(|v| spec.cdf(f64::from(v) + 0.5)).collect();
        cumulative.push(1.0);
        let mut pmf = Vec::with_capacity(cumulative.len());
        let mut prev = 0.0;
        for &c in &cumulative {
            pmf.push((c - prev).max(0.0));
            prev = c;
        }
        Ok(ScaledBetaSampler {
            spec,
            lo,
            cumulative,
            pmf,
        })
    }

    pub fn spec(&self) -> &BetaSpec {
        &self.spec
    }

    pub fn support(&self) -> (u8, u8) {
        (self.lo, self.lo + (self.pmf.len() - 1) as u8)
    }

    /// Probability of intensity `v`.
    pub fn pmf(&self, v: u8) -> f64 {
        v.checked_sub(self.lo)
            .and_then(|k| self.pmf.get(usize::from(k)))
            .copied()
            .unwrap_or(0.0)
    }

    /// Probabilities of all 256 intensity levels.
    pub fn pmf_table(&self) -> [f64; 256] {
        let mut t = [0.0; 256];
        for (k, &p) in self.pmf.iter().enumerate() {
            t[usize::from(self.lo) + k] = p;
        }
        t
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u8 {
        let u: f64 = rng.random();
        let k = self.cumulative.partition_point(|&c| c <= u);
        self.lo + k.min(self.cumulative.len() - 1) as u8
    }

    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [u8]) {
        for v in out {
            *v = self.sample(rng);
        }
    }

    /// 32 equal-width bins spanning the quantized support.
    pub fn default_histogram(&self) -> Histogram {
        let (lo, hi) = self.support();
        Histogram::uniform(f64::from(lo) - 0.5, f64::from(hi) + 0.5, 32)
    }

    /// Probability mass falling in each bin of `edges`.
    pub fn bin_probabilities(&self, hist: &Histogram) -> Vec<f64> {
        let mut probs = vec![0.0; hist.bins()];
        for (k, &p) in self.pmf.iter().enumerate() {
            let v = f64::from(self.lo) + k as f64;
            if let Some(b) = hist.bin_of(v) {
                probs[b] += p;
            }
        }
        probs
    }
}

/// One draw from a scaled Beta. Builds the inverse-CDF table on every call;
/// hold a [`ScaledBetaSampler`] when drawing more than a handful of values.
pub fn sample_scaled_beta<R: Rng + ?Sized>(spec: BetaSpec, rng: &mut R) -> Result<u8> {
    Ok(ScaledBetaSampler::new(spec)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_stream;

    /// Composite Simpson quadrature of the Beta density; independent of `beta_reg`.
    fn beta_cdf_quadrature(a: f64, b: f64, x: f64) -> f64 {
        let density = |t: f64| t.powf(a - 1.0) * (1.0 - t).powf(b - 1.0);
        let simpson = |hi: f64| {
            let n = 20_000;
            let h = hi / n as f64;
            let mut s = density(0.0) + density(hi);
            for i in 1..n {
                s += density(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        simpson(x) / simpson(1.0)
    }

    #[test]
    fn cdf_matches_quadrature() {
        for spec in [BetaSpec::FOREGROUND, BetaSpec::BACKGROUND] {
            for x in [0.1, 0.25, 0.5, 0.75, 0.9] {
                let t = spec.lambda + spec.sigma * x;
                let q = beta_cdf_quadrature(spec.alpha, spec.beta, x);
                assert!((spec.cdf(t) - q).abs() < 1e-8, "{spec:?} x={x}");
            }
        }
    }

    #[test]
    fn supports_match_reported_ranges() {
        assert_eq!(BetaSpec::FOREGROUND.support(), (97, 247));
        assert_eq!(BetaSpec::BACKGROUND.support(), (9, 199));
        let s = ScaledBetaSampler::new(BetaSpec::FOREGROUND).unwrap();
        let total: f64 = s.pmf_table().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn samples_stay_in_range() {
        let mut rng = rng_stream(1, 0);
        for (spec, lo, hi) in [
            (BetaSpec::FOREGROUND, 97, 247),
            (BetaSpec::BACKGROUND, 9, 199),
        ] {
            let s = ScaledBetaSampler::new(spec).unwrap();
            for _ in 0..200_000 {
                let v = s.sample(&mut rng);
                assert!((lo..=hi).contains(&v), "{v}");
            }
        }
    }

    #[test]
    fn foreground_mean_over_a_million_draws() {
        let expected = 96.0 + 152.0 * 4.0 / 6.0;
        assert!((BetaSpec::FOREGROUND.mean() - expected).abs() < 1e-12);
        let s = ScaledBetaSampler::new(BetaSpec::FOREGROUND).unwrap();
        let mut rng = rng_stream(2, 0);
        let n = 1_000_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let v = f64::from(s.sample(&mut rng));
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!((mean - expected).abs() < 0.1, "mean {mean}");
        // Quantization adds 1/12 to the continuous variance.
        let want = BetaSpec::FOREGROUND.variance() + 1.0 / 12.0;
        let se = want * (2.0 / n as f64).sqrt() * 3.0;
        assert!((var - want).abs() < 3.0 * se + 0.5, "var {var} vs {want}");
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        assert!(ScaledBetaSampler::new(BetaSpec::new(0.0, 2.0, 0.0, 100.0)).is_err());
        assert!(ScaledBetaSampler::new(BetaSpec::new(2.0, 2.0, 200.0, 100.0)).is_err());
        let mut rng = rng_stream(0, 0);
        assert!(sample_scaled_beta(BetaSpec::new(1.0, -1.0, 0.0, 10.0), &mut rng).is_err());
    }
}
