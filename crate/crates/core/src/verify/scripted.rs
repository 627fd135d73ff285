use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Verifier, VerifyError};
use crate::seed::{derive, hash_bytes};

/// Replays fixed scores keyed by step text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedVerifier {
    pub scorer_id: String,
    pub scores: HashMap<String, f64>,
    #[serde(default)]
    pub default: Option<f64>,
}

impl ScriptedVerifier {
    pub fn new(scorer_id: impl Into<String>) -> Self {
        Self {
            scorer_id: scorer_id.into(),
            scores: HashMap::new(),
            default: None,
        }
    }

    pub fn with_score(mut self, step: impl Into<String>, value: f64) -> Self {
        self.scores.insert(step.into(), value);
        self
    }

    pub fn with_default(mut self, value: f64) -> Self {
        self.default = Some(value);
        self
    }

    pub fn load(path: &Path) -> Result<Self, VerifyError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| VerifyError::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| VerifyError::Input(format!("{}: {e}", path.display())))
    }
}

impl Verifier for ScriptedVerifier {
    fn verifier_id(&self) -> &str {
        &self.scorer_id
    }

    fn score_steps(&self, _context: &str, steps: &[&str]) -> Result<Vec<f64>, VerifyError> {
        steps
            .iter()
            .map(|s| {
                self.scores
                    .get(*s)
                    .copied()
                    .or(self.default)
                    .ok_or_else(|| VerifyError::Input(format!("no scripted score for step {s:?}")))
            })
            .collect()
    }
}

/// Deterministic pseudo-random scores: step `i` scores a uniform value
/// derived from the seed, the context and `steps[..=i]`.
#[derive(Debug, Clone)]
pub struct HashVerifier {
    seed: u64,
}

impl HashVerifier {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl Verifier for HashVerifier {
    fn verifier_id(&self) -> &str {
        "hash"
    }

    fn score_steps(&self, context: &str, steps: &[&str]) -> Result<Vec<f64>, VerifyError> {
        let mut acc = derive(&[self.seed, hash_bytes(context.as_bytes())]);
        Ok(steps
            .iter()
            .map(|s| {
                acc = derive(&[acc, hash_bytes(s.as_bytes())]);
                (acc >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect())
    }
}

/// Wraps a verifier and records every call.
#[derive(Debug)]
pub struct CountingVerifier<V> {
    inner: V,
    calls: AtomicUsize,
    seen: Mutex<Vec<Vec<String>>>,
}

impl<V: Verifier> CountingVerifier<V> {
    pub fn new(inner: V) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Step lists passed to the inner verifier, in call order.
    pub fn seen(&self) -> Vec<Vec<String>> {
        self.seen.lock().unwrap().clone()
    }
}

impl<V: Verifier> Verifier for CountingVerifier<V> {
    fn verifier_id(&self) -> &str {
        self.inner.verifier_id()
    }

    fn score_steps(&self, context: &str, steps: &[&str]) -> Result<Vec<f64>, VerifyError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen
            .lock()
            .unwrap()
            .push(steps.iter().map(|s| s.to_string()).collect());
        self.inner.score_steps(context, steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::score;

    #[test]
    fn scripted_replay_is_stable() {
        let v = ScriptedVerifier::new("s").with_score("a", 0.3).with_default(0.5);
        assert_eq!(score(&v, "c", &["x", "a"]).unwrap().value, 0.3);
        assert_eq!(score(&v, "c", &["a", "x"]).unwrap().value, 0.5);
        assert_eq!(v.score_steps("c", &["a", "x"]), v.score_steps("c", &["a", "x"]));
        assert!(ScriptedVerifier::new("s").score_steps("c", &["x"]).is_err());
    }

    #[test]
    fn hash_scores_depend_on_history() {
        let v = HashVerifier::new(3);
        let a = v.score_steps("c", &["x", "y"]).unwrap();
        let b = v.score_steps("c", &["z", "y"]).unwrap();
        assert_ne!(a[1], b[1]);
        assert_eq!(a, v.score_steps("c", &["x", "y"]).unwrap());
        assert!(a.iter().all(|s| (0.0..1.0).contains(s)));
    }

    #[test]
    fn counting() {
        let v = CountingVerifier::new(HashVerifier::new(0));
        v.score_steps("c", &["a"]).unwrap();
        v.score_steps("c", &["a", "b"]).unwrap();
        assert_eq!(v.calls(), 2);
        assert_eq!(v.seen()[1], vec!["a".to_string(), "b".to_string()]);
    }
}
