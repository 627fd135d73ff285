//! Process-reward verifiers and score aggregation.

mod oracle;
mod remote;
mod scripted;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use oracle::OracleVerifier;
pub use remote::{RemoteVerifier, ScoreKind};
pub use scripted::{CountingVerifier, HashVerifier, ScriptedVerifier};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("invalid verifier input: {0}")]
    Input(String),
    #[error("score {value} from {scorer} is outside [0, 1]")]
    OutOfRange { value: f64, scorer: String },
    #[error("verifier returned {got} scores for {expected} steps")]
    Count { expected: usize, got: usize },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("HTTP status {status} after {attempts} attempt(s): {body}")]
    HttpStatus {
        status: u16,
        body: String,
        attempts: u32,
    },
    #[error("malformed response ({reason}): {payload}")]
    MalformedResponse { reason: String, payload: String },
}

impl VerifyError {
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            Self::Transport { .. }
                | Self::Timeout { .. }
                | Self::HttpStatus { .. }
                | Self::MalformedResponse { .. }
        )
    }
}

/// Verifier score of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepScore {
    pub value: f64,
    pub scorer_id: String,
    pub latency_ms: f64,
}

/// How per-step scores combine into a path's ranking key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Score of the newest step.
    #[default]
    Last,
    Min,
    Product,
    Mean,
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "last" => Ok(Self::Last),
            "min" => Ok(Self::Min),
            "product" => Ok(Self::Product),
            "mean" => Ok(Self::Mean),
            other => Err(format!("unknown aggregation {other:?}")),
        }
    }
}

pub fn aggregate_scores(scores: &[f64], rule: Aggregation) -> Result<f64, VerifyError> {
    let (first, last) = match (scores.first(), scores.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(VerifyError::Input("cannot aggregate an empty score list".into())),
    };
    Ok(match rule {
        Aggregation::Last => last,
        Aggregation::Min => scores.iter().copied().fold(first, f64::min),
        Aggregation::Product => scores.iter().product(),
        Aggregation::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
    })
}

pub trait Verifier: Send + Sync {
    fn verifier_id(&self) -> &str;

    /// Scores every step of a solution path. Entry `i` is the score of
    /// `steps[i]` given the context and `steps[..i]`.
    fn score_steps(&self, context: &str, steps: &[&str]) -> Result<Vec<f64>, VerifyError>;
}

/// Scores all steps of a path, validating count and range.
pub fn score_path<V: Verifier + ?Sized>(
    verifier: &V,
    context: &str,
    steps: &[&str],
) -> Result<Vec<StepScore>, VerifyError> {
    if context.is_empty() {
        return Err(VerifyError::Input("empty context".into()));
    }
    if steps.is_empty() {
        return Err(VerifyError::Input("no steps to score".into()));
    }
    let started = Instant::now();
    let values = verifier.score_steps(context, steps)?;
    let latency_ms = started.elapsed().as_secs_f64() * 1e3;
    if values.len() != steps.len() {
        return Err(VerifyError::Count {
            expected: steps.len(),
            got: values.len(),
        });
    }
    let scorer_id = verifier.verifier_id().to_string();
    let last = values.len() - 1;
    values
        .into_iter()
        .enumerate()
        .map(|(i, value)| {
            if !(0.0..=1.0).contains(&value) {
                return Err(VerifyError::OutOfRange {
                    value,
                    scorer: scorer_id.clone(),
                });
            }
            Ok(StepScore {
                value,
                scorer_id: scorer_id.clone(),
                latency_ms: if i == last { latency_ms } else { 0.0 },
            })
        })
        .collect()
}

/// Score of the newest step of `steps`.
pub fn score<V: Verifier + ?Sized>(
    verifier: &V,
    context: &str,
    steps: &[&str],
) -> Result<StepScore, VerifyError> {
    Ok(score_path(verifier, context, steps)?
        .pop()
        .expect("score_path returns one score per step"))
}

/// A pool entry with its verifier scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    /// Index into the candidate pool.
    pub candidate: usize,
    pub source_beam: usize,
    pub branch: usize,
    pub step_scores: Vec<StepScore>,
    pub aggregate: f64,
}

/// Sorts by aggregate descending, ties broken by (source beam, branch)
/// ascending. The order is total, so it does not depend on input order.
pub fn sort_scored(mut scored: Vec<ScoredCandidate>) -> Vec<ScoredCandidate> {
    scored.sort_by(|a, b| {
        b.aggregate
            .total_cmp(&a.aggregate)
            .then(a.source_beam.cmp(&b.source_beam))
            .then(a.branch.cmp(&b.branch))
    });
    scored
}
