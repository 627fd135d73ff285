//! Sequence models driven by the search engine.
//!
//! A [`SequenceModel`] maps a [`ModelContext`] to a next-token [`Prediction`].
//! Step generation ([`generate_step`]) runs a model token by token until a
//! step delimiter, a terminal marker or the per-step token cap, recording the
//! temperature-1 distribution behind every emitted token.

mod ngram;
mod profile;
mod remote;
mod scripted;
mod vocab;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{self, ProbError, TokenDistribution, UncertaintyReading};
use crate::seed::StreamKey;

pub use ngram::{build_ngram_model, NgramModel};
pub use profile::{ProfileModel, ProfilePlan, Slot};
pub use remote::{RemoteConfig, RemoteModel};
pub use scripted::{ScriptFile, ScriptedModel};
pub use vocab::Vocab;

pub type TokenId = u32;

#[derive(Debug, Error, Clone)]
pub enum ModelError {
    #[error("context of {len} tokens exceeds the model window of {window}")]
    ContextOverflow { len: usize, window: usize },
    #[error("no scripted distribution for context {context:?}")]
    Unscripted { context: String },
    #[error("tokenization failed: {0}")]
    Tokenize(String),
    #[error("unknown token id {0}")]
    UnknownToken(TokenId),
    #[error("invalid model parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Distribution(#[from] ProbError),
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

impl ModelError {
    /// True for failures talking to a remote server.
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

/// Prompt plus generated tokens. `text` is the prompt verbatim followed by
/// the concatenated pieces of the generated tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelContext {
    token_ids: Vec<TokenId>,
    text: String,
    prompt_tokens: usize,
    prompt_bytes: usize,
}

impl ModelContext {
    pub fn from_prompt<M: SequenceModel + ?Sized>(
        model: &M,
        prompt: &str,
    ) -> Result<Self, ModelError> {
        let token_ids = model.encode_prompt(prompt)?;
        Ok(Self {
            prompt_tokens: token_ids.len(),
            prompt_bytes: prompt.len(),
            token_ids,
            text: prompt.to_string(),
        })
    }

    /// A context built from raw parts; used by models that tokenize
    /// server-side and by tests.
    pub fn from_parts(prompt_ids: Vec<TokenId>, prompt: &str) -> Self {
        Self {
            prompt_tokens: prompt_ids.len(),
            prompt_bytes: prompt.len(),
            token_ids: prompt_ids,
            text: prompt.to_string(),
        }
    }

    pub fn push(&mut self, id: TokenId, piece: &str) {
        self.token_ids.push(id);
        self.text.push_str(piece);
    }

    pub fn token_ids(&self) -> &[TokenId] {
        &self.token_ids
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn prompt(&self) -> &str {
        &self.text[..self.prompt_bytes]
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_tokens
    }

    pub fn generated_ids(&self) -> &[TokenId] {
        &self.token_ids[self.prompt_tokens..]
    }

    pub fn generated_text(&self) -> &str {
        &self.text[self.prompt_bytes..]
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Which outcomes the entries of a prediction's distribution stand for.
#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    /// Entry `i` is token id `i`.
    Dense,
    /// Entry `i` is `ids[i]`; when `tail` is set the last entry is a
    /// synthetic bucket holding the mass of every unlisted token.
    Listed { ids: Vec<TokenId>, tail: bool },
}

/// A model's next-token prediction at one position.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub dist: TokenDistribution,
    pub support: Support,
    reading: UncertaintyReading,
}

impl Prediction {
    pub fn dense(dist: TokenDistribution) -> Self {
        Self::new(dist, Support::Dense)
    }

    pub fn new(dist: TokenDistribution, support: Support) -> Self {
        let reading = UncertaintyReading::of(&dist);
        Self {
            dist,
            support,
            reading,
        }
    }

    /// Entropy and varentropy of the full distribution, tail bucket included.
    pub fn reading(&self) -> UncertaintyReading {
        self.reading
    }

    pub fn entropy(&self) -> f64 {
        self.reading.entropy_bits
    }

    /// True when the distribution was truncated, so the entropy is a lower
    /// bound on the model's true entropy.
    pub fn entropy_lower_bound(&self) -> bool {
        matches!(self.support, Support::Listed { tail: true, .. })
    }

    /// Distribution over real tokens only (the tail bucket removed).
    pub fn sampling_dist(&self) -> Result<TokenDistribution, ProbError> {
        match &self.support {
            Support::Listed { ids, tail: true } => {
                TokenDistribution::from_weights(self.dist.probs()[..ids.len()].to_vec())
            }
            _ => Ok(self.dist.clone()),
        }
    }

    /// Token id for entry `index` of [`Prediction::sampling_dist`].
    pub fn token_at(&self, index: usize) -> TokenId {
        match &self.support {
            Support::Dense => index as TokenId,
            Support::Listed { ids, .. } => ids[index],
        }
    }
}

/// Where a step ends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepBoundaryRule {
    pub delimiters: Vec<String>,
    pub max_step_tokens: usize,
    pub terminal_markers: Vec<String>,
}

impl Default for StepBoundaryRule {
    fn default() -> Self {
        Self {
            delimiters: vec![".\n".into(), "\n\n".into()],
            max_step_tokens: 256,
            terminal_markers: vec!["<eos>".into()],
        }
    }
}

impl StepBoundaryRule {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.delimiters.is_empty() || self.delimiters.iter().any(String::is_empty) {
            return Err(ModelError::Parameter("step delimiters must be non-empty".into()));
        }
        if self.max_step_tokens == 0 {
            return Err(ModelError::Parameter("max_step_tokens must be >= 1".into()));
        }
        Ok(())
    }

    pub fn is_terminal(&self, text: &str) -> bool {
        self.terminal_markers
            .iter()
            .any(|m| !m.is_empty() && text.ends_with(m.as_str()))
    }

    pub fn is_delimited(&self, text: &str) -> bool {
        self.delimiters.iter().any(|d| text.ends_with(d.as_str()))
    }

    /// Stop reason implied by the step text so far, if any.
    pub fn boundary(&self, step_text: &str) -> Option<StopReason> {
        if self.is_terminal(step_text) {
            Some(StopReason::Terminal)
        } else if self.is_delimited(step_text) {
            Some(StopReason::Delimiter)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Delimiter,
    MaxTokens,
    Terminal,
    /// Generation halted before sampling because the entropy gate fired.
    Gated,
}

/// One emitted token and the temperature-1 prediction it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationEvent {
    pub token_id: TokenId,
    pub text: String,
    /// Offset within the step.
    pub position: usize,
    pub prediction: Arc<Prediction>,
}

impl GenerationEvent {
    pub fn entropy(&self) -> f64 {
        self.prediction.entropy()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub temperature: f64,
    /// Take the argmax instead of sampling.
    pub greedy: bool,
}

impl SamplerSettings {
    pub fn sampled(temperature: f64) -> Self {
        Self {
            temperature,
            greedy: false,
        }
    }
}

/// Entropy gate: stop before sampling at the first position whose entropy
/// exceeds `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate {
    pub tau: f64,
    /// Only inspect the first position of the step.
    pub first_token_only: bool,
}

impl Gate {
    pub fn fires(&self, position: usize, entropy: f64) -> bool {
        (!self.first_token_only || position == 0) && entropy > self.tau
    }
}

/// Arguments to [`SequenceModel::generate_step`].
#[derive(Debug, Clone)]
pub struct StepRequest<'a> {
    pub ctx: &'a ModelContext,
    pub rule: &'a StepBoundaryRule,
    pub sampler: SamplerSettings,
    pub stream: StreamKey,
    /// Step offset of the first token to generate; tokens `[0, start)` of the
    /// step are already part of `ctx`.
    pub start_position: usize,
    /// Text of the step tokens already in `ctx`.
    pub step_prefix: &'a str,
    pub gate: Option<Gate>,
}

impl<'a> StepRequest<'a> {
    pub fn new(
        ctx: &'a ModelContext,
        rule: &'a StepBoundaryRule,
        sampler: SamplerSettings,
        stream: StreamKey,
    ) -> Self {
        Self {
            ctx,
            rule,
            sampler,
            stream,
            start_position: 0,
            step_prefix: "",
            gate: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub events: Vec<GenerationEvent>,
    pub stop_reason: StopReason,
    /// Prediction at the gated position when `stop_reason` is `Gated`.
    pub gate_hit: Option<Arc<Prediction>>,
    /// Number of next-token predictions computed.
    pub model_calls: usize,
}

impl StepOutput {
    pub fn tokens(&self) -> Vec<TokenId> {
        self.events.iter().map(|e| e.token_id).collect()
    }

    pub fn text(&self) -> String {
        self.events.iter().map(|e| e.text.as_str()).collect()
    }
}

/// Whether a model may be called from several workers at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concurrency {
    Concurrent,
    Serial,
}

pub trait SequenceModel: Send + Sync {
    fn model_id(&self) -> &str;

    fn encode_prompt(&self, prompt: &str) -> Result<Vec<TokenId>, ModelError>;

    fn token_text(&self, id: TokenId) -> Result<String, ModelError>;

    /// Full next-token prediction; a deterministic function of `ctx`.
    fn next_distribution(&self, ctx: &ModelContext) -> Result<Prediction, ModelError>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }

    fn generate_step(&self, req: &StepRequest<'_>) -> Result<StepOutput, ModelError> {
        generate_tokenwise(self, req)
    }
}

/// Picks a token from `prediction` with the given sampler and generator.
pub fn choose_token<R: rand::Rng + ?Sized>(
    prediction: &Prediction,
    sampler: SamplerSettings,
    rng: &mut R,
) -> Result<TokenId, ModelError> {
    let dist = prediction.sampling_dist()?;
    let index = if sampler.greedy {
        dist.argmax()
    } else {
        prob::sample(&prob::apply_temperature(&dist, sampler.temperature)?, rng)
    };
    Ok(prediction.token_at(index))
}

/// Reference step generator: one `next_distribution` call per token.
pub fn generate_tokenwise<M: SequenceModel + ?Sized>(
    model: &M,
    req: &StepRequest<'_>,
) -> Result<StepOutput, ModelError> {
    let mut out = StepOutput {
        events: Vec::new(),
        stop_reason: StopReason::MaxTokens,
        gate_hit: None,
        model_calls: 0,
    };
    if req.start_position == 0 && req.rule.is_terminal(req.ctx.text()) {
        out.stop_reason = StopReason::Terminal;
        return Ok(out);
    }
    let mut ctx = req.ctx.clone();
    let mut step_text = req.step_prefix.to_string();
    for position in req.start_position..req.rule.max_step_tokens {
        let prediction = Arc::new(model.next_distribution(&ctx)?);
        out.model_calls += 1;
        if let Some(gate) = req.gate {
            if gate.fires(position, prediction.entropy()) {
                out.stop_reason = StopReason::Gated;
                out.gate_hit = Some(prediction);
                return Ok(out);
            }
        }
        let token_id = choose_token(&prediction, req.sampler, &mut req.stream.at(position))?;
        let text = model.token_text(token_id)?;
        ctx.push(token_id, &text);
        step_text.push_str(&text);
        out.events.push(GenerationEvent {
            token_id,
            text,
            position,
            prediction,
        });
        if let Some(reason) = req.rule.boundary(&step_text) {
            out.stop_reason = reason;
            return Ok(out);
        }
    }
    Ok(out)
}

/// Generates one step from `ctx` without gating.
pub fn generate_step<M: SequenceModel + ?Sized>(
    model: &M,
    ctx: &ModelContext,
    rule: &StepBoundaryRule,
    sampler: SamplerSettings,
    stream: StreamKey,
) -> Result<StepOutput, ModelError> {
    model.generate_step(&StepRequest::new(ctx, rule, sampler, stream))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> ScriptedModel {
        let vocab = Vocab::with_ascii_fallback(["x", " =", " 2", ".\n", "a"]).unwrap();
        ScriptedModel::sequence("demo", vocab, "", &["x", " =", " 2", ".", "\n"]).unwrap()
    }

    #[test]
    fn emits_scripted_step_until_delimiter() {
        let model = demo();
        let ctx = ModelContext::from_prompt(&model, "").unwrap();
        let rule = StepBoundaryRule::default();
        let out = generate_step(&model, &ctx, &rule, SamplerSettings::sampled(0.7), StreamKey(1))
            .unwrap();
        assert_eq!(out.text(), "x = 2.\n");
        assert_eq!(out.events.len(), 5);
        assert_eq!(out.stop_reason, StopReason::Delimiter);
        for (i, e) in out.events.iter().enumerate() {
            assert_eq!(e.position, i);
            assert_eq!(e.entropy(), 0.0);
        }
    }

    #[test]
    fn caps_step_length() {
        let vocab = Vocab::new(["a"]).unwrap();
        let model = ScriptedModel::new("loop", vocab.clone())
            .with_default(TokenDistribution::one_hot(1, 0));
        let ctx = ModelContext::from_parts(vec![], "");
        let rule = StepBoundaryRule {
            max_step_tokens: 3,
            ..Default::default()
        };
        let out = generate_step(&model, &ctx, &rule, SamplerSettings::sampled(1.0), StreamKey(0))
            .unwrap();
        assert_eq!(out.events.len(), 3);
        assert_eq!(out.stop_reason, StopReason::MaxTokens);
    }

    #[test]
    fn terminal_context_emits_nothing() {
        let model = demo();
        let ctx = ModelContext::from_parts(vec![], "done<eos>");
        let out = generate_step(
            &model,
            &ctx,
            &StepBoundaryRule::default(),
            SamplerSettings::sampled(1.0),
            StreamKey(0),
        )
        .unwrap();
        assert!(out.events.is_empty());
        assert_eq!(out.stop_reason, StopReason::Terminal);
    }

    #[test]
    fn step_generation_is_deterministic() {
        let model = ProfileModel::new(
            "p",
            8,
            6,
            3,
            11,
            ProfilePlan::Random {
                fork_rate: 0.5,
                low_rate: 0.5,
                max_arity: 5,
                context_sensitive: true,
            },
        )
        .unwrap();
        let ctx = ModelContext::from_prompt(&model, "Q1").unwrap();
        let rule = StepBoundaryRule::default();
        let run = || {
            let out = generate_step(&model, &ctx, &rule, SamplerSettings::sampled(1.0), StreamKey(5))
                .unwrap();
            (out.tokens(), out.events.iter().map(|e| e.entropy()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gate_stops_before_sampling() {
        let model = ProfileModel::new(
            "p",
            8,
            5,
            2,
            3,
            ProfilePlan::Fixed(vec![vec![Slot::Deterministic, Slot::Deterministic, Slot::Fork(4)]]),
        )
        .unwrap();
        let ctx = ModelContext::from_prompt(&model, "Q").unwrap();
        let rule = StepBoundaryRule::default();
        let mut req = StepRequest::new(&ctx, &rule, SamplerSettings::sampled(1.0), StreamKey(0));
        req.gate = Some(Gate {
            tau: 1.0,
            first_token_only: false,
        });
        let out = model.generate_step(&req).unwrap();
        assert_eq!(out.stop_reason, StopReason::Gated);
        assert_eq!(out.events.len(), 2);
        assert_eq!(out.model_calls, 3);
        assert!((out.gate_hit.unwrap().entropy() - 2.0).abs() < 1e-12);

        req.gate = Some(Gate {
            tau: 1.0,
            first_token_only: true,
        });
        let out = model.generate_step(&req).unwrap();
        assert_eq!(out.stop_reason, StopReason::Delimiter);
    }

    #[test]
    fn tail_bucket_is_not_sampled() {
        let dist = TokenDistribution::new(vec![0.5, 0.3, 0.2]).unwrap();
        let p = Prediction::new(
            dist,
            Support::Listed {
                ids: vec![7, 9],
                tail: true,
            },
        );
        assert!(p.entropy_lower_bound());
        let s = p.sampling_dist().unwrap();
        assert!((s.probs()[0] - 0.625).abs() < 1e-12);
        for seed in 0..50 {
            let id = choose_token(&p, SamplerSettings::sampled(1.0), &mut crate::seed::token_rng(seed))
                .unwrap();
            assert!(id == 7 || id == 9);
        }
    }
}
