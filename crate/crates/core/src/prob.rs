//! Probability-distribution math over a finite vocabulary.
//!
//! Everything here is measured in bits: entropy uses `log2`, varentropy is the
//! variance of the per-token surprisal `-log2 p` and is reported in bits².

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on `sum(p) == 1` accepted by [`TokenDistribution::new`].
pub const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbError {
    #[error("distribution invariant violated: {0}")]
    InvalidDistribution(String),
    #[error("parameter `{name}` out of domain: {value}")]
    Domain { name: &'static str, value: f64 },
}

/// A probability vector over a vocabulary of size `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    /// Validates that every entry is finite and non-negative and that the
    /// entries sum to one within [`SUM_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self, ProbError> {
        if probs.is_empty() {
            return Err(ProbError::InvalidDistribution("empty vocabulary".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(ProbError::InvalidDistribution(format!(
                "entry {i} is {p}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(ProbError::InvalidDistribution(format!(
                "entries sum to {sum}"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self, ProbError> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ProbError::InvalidDistribution(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(ProbError::InvalidDistribution("weights sum to zero".into()));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn one_hot(vocab_size: usize, index: usize) -> Self {
        assert!(index < vocab_size, "one-hot index {index} >= {vocab_size}");
        let mut probs = vec![0.0; vocab_size];
        probs[index] = 1.0;
        Self { probs }
    }

    pub fn uniform(vocab_size: usize) -> Self {
        assert!(vocab_size > 0);
        Self {
            probs: vec![1.0 / vocab_size as f64; vocab_size],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    /// Number of outcomes with non-zero probability.
    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|p| **p > 0.0).count()
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for TokenDistribution {
    type Error = ProbError;

    fn try_from(probs: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(probs)
    }
}

impl From<TokenDistribution> for Vec<f64> {
    fn from(d: TokenDistribution) -> Self {
        d.probs
    }
}

/// Entropy and varentropy of one next-token distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReading {
    pub entropy_bits: f64,
    pub varentropy_bits2: f64,
}

impl UncertaintyReading {
    pub fn of(dist: &TokenDistribution) -> Self {
        let h = entropy(dist);
        Self {
            entropy_bits: h,
            varentropy_bits2: varentropy_with(dist, h),
        }
    }
}

/// Size of the support when every non-zero probability is identical.
fn equiprobable_support(dist: &TokenDistribution) -> Option<usize> {
    let mut nonzero = dist.probs.iter().filter(|p| **p > 0.0);
    let first = *nonzero.next()?;
    let mut n = 1;
    for p in nonzero {
        if *p != first {
            return None;
        }
        n += 1;
    }
    Some(n)
}

/// Shannon entropy in bits, with `0 log 0 = 0`.
pub fn entropy(dist: &TokenDistribution) -> f64 {
    // Summation drifts by an ulp or so on uniform supports; log2 n is exact.
    if let Some(n) = equiprobable_support(dist) {
        return (n as f64).log2();
    }
    let h: f64 = dist
        .probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.log2())
        .sum();
    // Rounding can leave a one-hot at -0.0 or a uniform a hair above log2 V.
    h.clamp(0.0, (dist.vocab_size() as f64).log2())
}

/// Variance of the surprisal `-log2 p_i` under the distribution, in bits².
pub fn varentropy(dist: &TokenDistribution) -> f64 {
    varentropy_with(dist, entropy(dist))
}

fn varentropy_with(dist: &TokenDistribution, h: f64) -> f64 {
    if equiprobable_support(dist).is_some() {
        return 0.0;
    }
    let v: f64 = dist
        .probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| {
            let d = -p.log2() - h;
            p * d * d
        })
        .sum();
    v.max(0.0)
}

/// Returns the distribution proportional to `p_i^(1/temperature)`.
pub fn apply_temperature(
    dist: &TokenDistribution,
    temperature: f64,
) -> Result<TokenDistribution, ProbError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(ProbError::Domain {
            name: "temperature",
            value: temperature,
        });
    }
    if temperature == 1.0 {
        return Ok(dist.clone());
    }
    let max_log = dist
        .probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = dist
        .probs
        .iter()
        .map(|p| {
            if *p > 0.0 {
                ((p.ln() - max_log) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    TokenDistribution::from_weights(weights)
}

/// Draws one index from `dist`. Consumes exactly one `f64` from `rng`.
pub fn sample<R: Rng + ?Sized>(dist: &TokenDistribution, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    let mut last_nonzero = 0;
    for (i, p) in dist.probs.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        last_nonzero = i;
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    last_nonzero
}

/// Draws up to `n` distinct indices without replacement (Gumbel top-k).
///
/// The result is ordered by draw: the first element is distributed exactly
/// as [`sample`], the second as a draw from the remaining mass, and so on.
/// Returns fewer than `n` indices when the support is smaller than `n`.
pub fn sample_distinct<R: Rng + ?Sized>(
    dist: &TokenDistribution,
    n: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = dist
        .probs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            // One uniform per vocabulary entry keeps the draw count independent
            // of the support, so streams stay aligned across distributions.
            let u: f64 = rng.gen();
            (i, *p, u)
        })
        .filter(|(_, p, _)| *p > 0.0)
        .map(|(i, p, u)| {
            let gumbel = -(-(u.max(f64::MIN_POSITIVE)).ln()).ln();
            (p.ln() + gumbel, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(n).map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::token_rng;
    use proptest::prelude::*;

    fn naive_entropy(p: &[f64]) -> f64 {
        let mut h = 0.0;
        for &x in p {
            if x > 0.0 {
                h -= x * x.log2();
            }
        }
        h
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&TokenDistribution::uniform(4)), 2.0);
        assert_eq!(entropy(&TokenDistribution::one_hot(7, 3)), 0.0);
        let d = TokenDistribution::new(vec![0.5, 0.25, 0.125, 0.125]).unwrap();
        assert!((entropy(&d) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn varentropy_examples() {
        assert_eq!(varentropy(&TokenDistribution::one_hot(5, 0)), 0.0);
        assert!(varentropy(&TokenDistribution::uniform(13)) < 1e-12);
        let d = TokenDistribution::new(vec![0.5, 0.5, 0.0]).unwrap();
        assert!(varentropy(&d) < 1e-15);
        // 0.75 * (log2(4/3) - H)^2 + 0.25 * (2 - H)^2, H = 0.811278...
        let d = TokenDistribution::new(vec![0.75, 0.25]).unwrap();
        let h = 0.75 * (4.0f64 / 3.0).log2() + 0.25 * 2.0;
        let oracle = 0.75 * ((4.0f64 / 3.0).log2() - h).powi(2) + 0.25 * (2.0 - h).powi(2);
        assert!((varentropy(&d) - oracle).abs() < 1e-12);
        assert!((varentropy(&d) - 0.1875 * (3.0f64).log2().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid() {
        assert!(matches!(
            TokenDistribution::new(vec![0.5, 0.6]),
            Err(ProbError::InvalidDistribution(_))
        ));
        assert!(TokenDistribution::new(vec![1.1, -0.1]).is_err());
        assert!(TokenDistribution::new(vec![]).is_err());
        assert!(TokenDistribution::new(vec![0.5, 0.5 + 5e-7]).is_ok());
        assert!(serde_json::from_str::<TokenDistribution>("[0.2, 0.2]").is_err());
    }

    #[test]
    fn temperature_examples() {
        let d = TokenDistribution::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(apply_temperature(&d, 1.0).unwrap(), d);

        let d = TokenDistribution::new(vec![0.9, 0.1]).unwrap();
        let cold = apply_temperature(&d, 0.01).unwrap();
        assert!((cold.probs()[0] - 1.0).abs() < 1e-3);

        let d = TokenDistribution::new(vec![0.8, 0.2]).unwrap();
        let warm = apply_temperature(&d, 2.0).unwrap();
        let (a, b) = (0.8f64.sqrt(), 0.2f64.sqrt());
        assert!((warm.probs()[0] - a / (a + b)).abs() < 1e-12);
        assert!((warm.probs()[1] - b / (a + b)).abs() < 1e-12);

        for bad in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                apply_temperature(&d, bad),
                Err(ProbError::Domain { name: "temperature", .. })
            ));
        }
    }

    #[test]
    fn sample_examples() {
        let d = TokenDistribution::one_hot(6, 3);
        for s in 0..20 {
            assert_eq!(sample(&d, &mut token_rng(s)), 3);
        }

        let d = TokenDistribution::uniform(2);
        let mut rng = token_rng(42);
        let zeros = (0..10_000).filter(|_| sample(&d, &mut rng) == 0).count();
        let freq = zeros as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&freq), "freq {freq}");

        let d = TokenDistribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let run = |seed| {
            let mut rng = token_rng(seed);
            (0..64).map(|_| sample(&d, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn distinct_draws_cover_small_support() {
        let d = TokenDistribution::new(vec![0.5, 0.0, 0.5]).unwrap();
        for s in 0..50 {
            let mut got = sample_distinct(&d, 4, &mut token_rng(s));
            assert_eq!(got.len(), 2);
            got.sort();
            assert_eq!(got, vec![0, 2]);
        }
        let d = TokenDistribution::one_hot(3, 1);
        assert_eq!(sample_distinct(&d, 3, &mut token_rng(1)), vec![1]);
    }

    #[test]
    fn distinct_first_draw_matches_marginal() {
        let d = TokenDistribution::new(vec![0.6, 0.3, 0.1]).unwrap();
        let n = 20_000;
        let mut counts = [0usize; 3];
        for s in 0..n {
            counts[sample_distinct(&d, 1, &mut token_rng(s))[0]] += 1;
        }
        for (c, p) in counts.iter().zip(d.probs()) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.015, "{counts:?}");
        }
    }

    fn arb_dist() -> impl Strategy<Value = TokenDistribution> {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], 2..64).prop_filter_map(
            "all-zero weights",
            |w| TokenDistribution::from_weights(w).ok(),
        )
    }

    proptest! {
        #[test]
        fn entropy_bounds_and_oracle(d in arb_dist()) {
            let h = entropy(&d);
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (d.vocab_size() as f64).log2());
            prop_assert!((h - naive_entropy(d.probs())).abs() < 1e-9);
            prop_assert!(varentropy(&d) >= 0.0);
        }

        #[test]
        fn temperature_preserves_argmax(d in arb_dist(), t in 0.05f64..8.0) {
            let scaled = apply_temperature(&d, t).unwrap();
            prop_assert_eq!(scaled.argmax(), d.argmax());
            let sum: f64 = scaled.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn sample_hits_support(d in arb_dist(), seed in any::<u64>()) {
            let i = sample(&d, &mut token_rng(seed));
            prop_assert!(d.probs()[i] > 0.0);
        }
    }
}
