//! The search engine: entropy-gated branching plus the standard decoding,
//! beam search and self-consistency baselines.
//!
//! Every search step expands each live beam into candidates
//! ([`expand_step`]), removes duplicate token sequences ([`dedup`]), scores
//! the survivors with a verifier ([`rank_candidates`]) and keeps the best
//! `K` ([`select`]).

mod config;
mod expand;
mod select;
mod vote;

use std::time::Instant;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::answer::extract_answer;
use crate::exec::Executor;
use crate::lm::{Concurrency, GenerationEvent, ModelContext, ModelError, SequenceModel, TokenId};
use crate::prob::UncertaintyReading;
use crate::verify::{StepScore, Verifier, VerifyError};

pub use config::{tau_serde, CertainDecoding, ConfigError, Method, SearchConfig};
pub use expand::{
    beam_search_expand, detect_first_exceedance, expand_step, rollback_and_branch, Branching,
};
pub use select::{dedup, rank_candidates, select, Pick, Ranking, Selection};
pub use vote::{self_consistency_vote, VoteEntry};

/// How a token was sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerState {
    /// Base sampler, no exceedance seen yet in this step.
    Certain,
    /// Branch temperature, after a branch point.
    Uncertain,
    /// The first high-entropy position, where the step forked.
    BranchPoint,
}

/// One generated token of a beam.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenRecord {
    pub token_id: TokenId,
    pub text: String,
    /// Index of the beam step the token belongs to (0-based).
    pub step_index: usize,
    pub reading: UncertaintyReading,
    pub state: SamplerState,
    pub entropy_lower_bound: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BranchEvent {
    pub step_index: usize,
    /// Offset of the branch point within the beam's generated tokens.
    pub token_position: usize,
    /// Offset of the branch point within its step.
    pub t_star: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub text: String,
    pub score: StepScore,
}

fn generated_text<S: Serializer>(ctx: &ModelContext, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(ctx.generated_text())
}

/// One hypothesis: the prompt plus the steps generated so far.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Beam {
    pub id: usize,
    /// Random stream the beam draws from; see [`crate::seed::lane_seed`].
    pub lane: usize,
    #[serde(rename = "text", serialize_with = "generated_text")]
    pub ctx: ModelContext,
    pub steps: Vec<StepRecord>,
    pub tokens: Vec<TokenRecord>,
    pub branch_events: Vec<BranchEvent>,
    pub finished: bool,
    pub aggregate: f64,
}

impl Beam {
    pub fn root(ctx: ModelContext, finished: bool) -> Self {
        Self {
            id: 0,
            lane: 0,
            ctx,
            steps: Vec::new(),
            tokens: Vec::new(),
            branch_events: Vec::new(),
            finished,
            aggregate: 0.0,
        }
    }

    pub fn step_texts(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.text.as_str()).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.score.value).collect()
    }

    pub fn entropy_trace(&self) -> Vec<UncertaintyReading> {
        self.tokens.iter().map(|t| t.reading).collect()
    }

    /// The beam extended by `candidate`, with the full per-step score list
    /// `scores` (one entry per step after extension).
    fn extend(&self, candidate: &Candidate, scores: &[StepScore], aggregate: f64) -> Self {
        let mut beam = self.clone();
        let step_index = beam.steps.len();
        let offset = beam.tokens.len();
        let mut text = String::new();
        for (event, state) in candidate.events.iter().zip(&candidate.states) {
            beam.ctx.push(event.token_id, &event.text);
            text.push_str(&event.text);
            beam.tokens.push(TokenRecord {
                token_id: event.token_id,
                text: event.text.clone(),
                step_index,
                reading: event.prediction.reading(),
                state: *state,
                entropy_lower_bound: event.prediction.entropy_lower_bound(),
            });
        }
        if let Some(t_star) = candidate.t_star {
            beam.branch_events.push(BranchEvent {
                step_index,
                token_position: offset + t_star,
                t_star,
            });
        }
        let placeholder = scores.last().cloned().expect("at least one score");
        beam.steps.push(StepRecord {
            text,
            score: placeholder,
        });
        for (step, score) in beam.steps.iter_mut().zip(scores) {
            step.score = score.clone();
        }
        beam.finished = candidate.stop_reason == crate::lm::StopReason::Terminal;
        beam.aggregate = aggregate;
        beam
    }
}

/// One proposed continuation of a beam for the current step.
#[derive(Debug, Clone)]
pub struct Candidate {
    /// Index of the beam this candidate extends.
    pub source_beam: usize,
    pub branch: usize,
    pub lane: usize,
    pub events: Vec<GenerationEvent>,
    /// Sampler state per event.
    pub states: Vec<SamplerState>,
    pub stop_reason: crate::lm::StopReason,
    /// Branch point within the step, for candidates from a branch event.
    pub t_star: Option<usize>,
    /// A finished beam carried forward unchanged.
    pub passthrough: bool,
}

impl Candidate {
    pub fn tokens(&self) -> Vec<TokenId> {
        self.events.iter().map(|e| e.token_id).collect()
    }

    pub fn text(&self) -> String {
        self.events.iter().map(|e| e.text.as_str()).collect()
    }

    fn passthrough(source_beam: usize, lane: usize) -> Self {
        Self {
            source_beam,
            branch: 0,
            lane,
            events: Vec::new(),
            states: Vec::new(),
            stop_reason: crate::lm::StopReason::Terminal,
            t_star: None,
            passthrough: true,
        }
    }
}

/// A duplicate dropped by [`dedup`], with the index of the entry that
/// survived in its place.
#[derive(Debug, Clone)]
pub struct Removed {
    pub candidate: Candidate,
    pub survivor: usize,
}

/// The candidates of one search step.
#[derive(Debug, Clone, Default)]
pub struct CandidatePool {
    pub entries: Vec<Candidate>,
    pub dedup_removed: usize,
    pub removed: Vec<Removed>,
    /// Live beams that produced a single continuation.
    pub certain: usize,
    /// Live beams that branched.
    pub uncertain: usize,
    /// Newly generated candidates, before dedup (finished beams excluded).
    pub generated: usize,
    pub model_calls: usize,
    pub tokens_generated: usize,
}

/// Counters for one search step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepStats {
    pub step: usize,
    pub live_beams: usize,
    pub certain: usize,
    pub uncertain: usize,
    /// Newly generated candidates before dedup.
    pub pool_size: usize,
    pub dedup_removed: usize,
    pub readmitted: usize,
    pub replicated: usize,
    pub branch_events: usize,
    pub model_calls: usize,
    pub tokens_generated: usize,
    pub verifier_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub prompt: String,
    pub method: Method,
    /// Final answer: extracted from the best beam, or the majority vote for
    /// self-consistency.
    pub answer: String,
    pub best_beam: Beam,
    pub all_beams: Vec<Beam>,
    pub total_candidates_generated: usize,
    pub total_model_calls: usize,
    pub total_tokens_generated: usize,
    pub total_verifier_calls: usize,
    pub wall_time_ms: f64,
    pub per_step_pool_sizes: Vec<usize>,
    pub steps: Vec<StepStats>,
}

impl SearchResult {
    pub fn branch_event_count(&self) -> usize {
        self.all_beams.iter().map(|b| b.branch_events.len()).sum()
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model failed at step {step} expanding beam {beam}: {source}")]
    Model {
        step: usize,
        beam: usize,
        #[source]
        source: ModelError,
    },
    #[error("verifier failed at step {step} on candidate (beam {beam}, branch {branch}): {source}")]
    Verifier {
        step: usize,
        beam: usize,
        branch: usize,
        #[source]
        source: VerifyError,
    },
}

impl SearchError {
    pub fn is_transport(&self) -> bool {
        match self {
            Self::Config(_) => false,
            Self::Model { source, .. } => source.is_transport(),
            Self::Verifier { source, .. } => source.is_transport(),
        }
    }
}

/// Runs a search on one sequential worker.
pub fn run_search<M, V>(
    prompt: &str,
    cfg: &SearchConfig,
    model: &M,
    verifier: &V,
) -> Result<SearchResult, SearchError>
where
    M: SequenceModel + ?Sized,
    V: Verifier + ?Sized,
{
    run_search_with(prompt, cfg, model, verifier, &Executor::sequential())
}

/// Runs a search, fanning beam expansions and verifier calls out over
/// `exec`. The result does not depend on the number of workers.
pub fn run_search_with<M, V>(
    prompt: &str,
    cfg: &SearchConfig,
    model: &M,
    verifier: &V,
    exec: &Executor,
) -> Result<SearchResult, SearchError>
where
    M: SequenceModel + ?Sized,
    V: Verifier + ?Sized,
{
    cfg.validate()?;
    let started = Instant::now();
    let model_exec = match model.concurrency() {
        Concurrency::Concurrent => exec.clone(),
        Concurrency::Serial => Executor::sequential(),
    };
    let ctx = ModelContext::from_prompt(model, prompt).map_err(|source| SearchError::Model {
        step: 0,
        beam: 0,
        source,
    })?;
    let finished = cfg.step_rule.is_terminal(ctx.text());
    let mut beams = vec![Beam::root(ctx, finished)];
    let mut stats = Vec::new();
    for step in 1..=cfg.max_steps {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        let pool = if cfg.method == Method::BeamSearch {
            expand::beam_search_step(&beams, cfg, model, step, &model_exec)?
        } else {
            expand_step(&beams, cfg, model, step, &model_exec)?
        };
        let pool = dedup(pool, &beams);
        let ranking = rank_candidates(&pool, &beams, cfg, verifier, step, exec)?;
        let selection = select(&pool, &ranking, cfg.beam_size);
        let next = selection.build_beams(&pool, &ranking, &beams);
        stats.push(StepStats {
            step,
            live_beams: beams.iter().filter(|b| !b.finished).count(),
            certain: pool.certain,
            uncertain: pool.uncertain,
            pool_size: pool.generated,
            dedup_removed: pool.dedup_removed,
            readmitted: selection.readmitted,
            replicated: selection.replicated,
            branch_events: pool
                .entries
                .iter()
                .chain(pool.removed.iter().map(|r| &r.candidate))
                .filter(|c| c.t_star.is_some() && c.branch == 0)
                .count(),
            model_calls: pool.model_calls,
            tokens_generated: pool.tokens_generated,
            verifier_calls: ranking.verifier_calls,
        });
        beams = next;
    }
    Ok(finish(prompt, cfg, beams, stats, started))
}

fn finish(
    prompt: &str,
    cfg: &SearchConfig,
    beams: Vec<Beam>,
    stats: Vec<StepStats>,
    started: Instant,
) -> SearchResult {
    let any_finished = beams.iter().any(|b| b.finished);
    let best = beams
        .iter()
        .filter(|b| b.finished || !any_finished)
        .fold(None::<&Beam>, |best, b| match best {
            Some(x) if x.aggregate >= b.aggregate => Some(x),
            _ => Some(b),
        })
        .expect("at least one beam")
        .clone();
    let markers = &cfg.step_rule.terminal_markers;
    let answer = if cfg.method == Method::SelfConsistency {
        let entries: Vec<VoteEntry> = beams
            .iter()
            .map(|b| VoteEntry {
                answer: extract_answer(b.ctx.generated_text(), markers),
                score: b.aggregate,
            })
            .collect();
        self_consistency_vote(&entries).unwrap_or_default()
    } else {
        extract_answer(best.ctx.generated_text(), markers)
    };
    SearchResult {
        prompt: prompt.to_string(),
        method: cfg.method,
        answer,
        best_beam: best,
        total_candidates_generated: stats.iter().map(|s| s.pool_size).sum(),
        total_model_calls: stats.iter().map(|s| s.model_calls).sum(),
        total_tokens_generated: stats.iter().map(|s| s.tokens_generated).sum(),
        total_verifier_calls: stats.iter().map(|s| s.verifier_calls).sum(),
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        per_step_pool_sizes: stats.iter().map(|s| s.pool_size).collect(),
        all_beams: beams,
        steps: stats,
    }
}
