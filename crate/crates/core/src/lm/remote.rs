use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{
    GenerationEvent, ModelContext, ModelError, Prediction, SequenceModel, StepOutput, StepRequest,
    StopReason, Support, TokenId,
};
use crate::http::{HttpConfig, HttpError, JsonClient};
use crate::prob::TokenDistribution;

pub const MODEL_URL_ENV: &str = "EGB_MODEL_URL";
pub const MODEL_TOKEN_ENV: &str = "EGB_MODEL_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    #[serde(flatten)]
    pub http: HttpConfig,
    /// Number of top logprobs requested per position.
    pub top_n: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            http: HttpConfig::default(),
            top_n: 20,
        }
    }
}

#[derive(Debug, Serialize)]
struct NextRequest<'a> {
    context_text: &'a str,
    top_n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct WireToken {
    pub id: TokenId,
    pub logprob: f64,
    /// Piece text; not part of the minimal protocol, but needed to rebuild
    /// context text client-side.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Deserialize)]
struct NextResponse {
    tokens: Vec<WireToken>,
    #[allow(dead_code)]
    model_id: String,
}

#[derive(Debug, Serialize)]
struct StepWireRequest<'a> {
    context_text: &'a str,
    delimiters: &'a [String],
    max_tokens: usize,
    temperature: f64,
    seed: u64,
    top_n: usize,
}

#[derive(Debug, Deserialize)]
struct WireEvent {
    token_id: TokenId,
    position: usize,
    top_logprobs: Vec<WireToken>,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Debug, Deserialize)]
struct StepWireResponse {
    text: String,
    events: Vec<WireEvent>,
    stop_reason: String,
}

/// Sequence model served over HTTP.
///
/// The server returns only the top-n logprobs per position. The residual
/// mass becomes one synthetic tail bucket: entropy is computed with the tail
/// as a single outcome (a lower bound on the true entropy, flagged on the
/// prediction) and the tail is never sampled.
#[derive(Debug)]
pub struct RemoteModel {
    id: String,
    client: JsonClient,
    config: RemoteConfig,
    texts: Mutex<HashMap<TokenId, String>>,
}

fn malformed(reason: impl Into<String>, payload: &str) -> ModelError {
    ModelError::MalformedResponse {
        reason: reason.into(),
        payload: payload.to_string(),
    }
}

impl From<HttpError> for ModelError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Timeout { attempts } => ModelError::Timeout { attempts },
            HttpError::Transport { message, attempts } => ModelError::Transport { message, attempts },
            HttpError::Status {
                status,
                body,
                attempts,
            } => ModelError::HttpStatus {
                status,
                body,
                attempts,
            },
            HttpError::Malformed { reason, payload } => ModelError::MalformedResponse { reason, payload },
        }
    }
}

/// Builds a prediction from top-n logprobs, folding the residual mass into a
/// tail bucket.
pub(crate) fn prediction_from_logprobs(
    tokens: &[WireToken],
    payload: &str,
) -> Result<Prediction, ModelError> {
    if tokens.is_empty() {
        return Err(malformed("empty logprob list", payload));
    }
    let mut seen = HashSet::new();
    let mut probs = Vec::with_capacity(tokens.len() + 1);
    for t in tokens {
        if !t.logprob.is_finite() || t.logprob > 1e-9 {
            return Err(malformed(format!("logprob {} for token {}", t.logprob, t.id), payload));
        }
        if !seen.insert(t.id) {
            return Err(malformed(format!("token {} listed twice", t.id), payload));
        }
        probs.push(t.logprob.exp());
    }
    let listed: f64 = probs.iter().sum();
    if listed > 1.0 + crate::prob::SUM_TOLERANCE {
        return Err(malformed(format!("probabilities sum to {listed}"), payload));
    }
    let tail = 1.0 - listed;
    let has_tail = tail > 1e-9;
    if has_tail {
        probs.push(tail);
    }
    let dist = TokenDistribution::from_weights(probs).map_err(|e| malformed(e.to_string(), payload))?;
    Ok(Prediction::new(
        dist,
        Support::Listed {
            ids: tokens.iter().map(|t| t.id).collect(),
            tail: has_tail,
        },
    ))
}

impl RemoteModel {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, config: RemoteConfig) -> Self {
        let client = JsonClient::new(endpoint, token, config.http.clone());
        Self {
            id: format!("remote:{}", client.base_url()),
            client,
            config,
            texts: Mutex::new(HashMap::new()),
        }
    }

    /// Reads the endpoint from `EGB_MODEL_URL` and the optional bearer token
    /// from `EGB_MODEL_TOKEN`.
    pub fn from_env(config: RemoteConfig) -> Result<Self, ModelError> {
        let url = std::env::var(MODEL_URL_ENV)
            .map_err(|_| ModelError::Parameter(format!("{MODEL_URL_ENV} is not set")))?;
        Ok(Self::new(url, std::env::var(MODEL_TOKEN_ENV).ok(), config))
    }

    /// Retries performed so far across all calls.
    pub fn retries(&self) -> u64 {
        self.client.retries()
    }

    fn remember(&self, tokens: &[WireToken]) {
        let mut texts = self.texts.lock().unwrap();
        for t in tokens {
            if let Some(text) = &t.text {
                texts.insert(t.id, text.clone());
            }
        }
    }
}

impl SequenceModel for RemoteModel {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn encode_prompt(&self, _prompt: &str) -> Result<Vec<TokenId>, ModelError> {
        // The server tokenizes `context_text` itself.
        Ok(Vec::new())
    }

    fn token_text(&self, id: TokenId) -> Result<String, ModelError> {
        self.texts
            .lock()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or_else(|| malformed(format!("server never supplied text for token {id}"), ""))
    }

    fn next_distribution(&self, ctx: &ModelContext) -> Result<Prediction, ModelError> {
        let request = NextRequest {
            context_text: ctx.text(),
            top_n: self.config.top_n,
        };
        let (resp, raw): (NextResponse, String) = self.client.post_json("/v1/next", &request)?;
        self.remember(&resp.tokens);
        prediction_from_logprobs(&resp.tokens, &raw)
    }

    fn generate_step(&self, req: &StepRequest<'_>) -> Result<StepOutput, ModelError> {
        if req.start_position == 0 && req.rule.is_terminal(req.ctx.text()) {
            return Ok(StepOutput {
                events: Vec::new(),
                stop_reason: StopReason::Terminal,
                gate_hit: None,
                model_calls: 0,
            });
        }
        let request = StepWireRequest {
            context_text: req.ctx.text(),
            delimiters: &req.rule.delimiters,
            max_tokens: req.rule.max_step_tokens.saturating_sub(req.start_position),
            temperature: if req.sampler.greedy { 0.0 } else { req.sampler.temperature },
            seed: req.stream.0,
            top_n: self.config.top_n,
        };
        let (resp, raw): (StepWireResponse, String) =
            self.client.post_json("/v1/generate_step", &request)?;
        let stop_reason = match resp.stop_reason.as_str() {
            "delimiter" => StopReason::Delimiter,
            "max_tokens" => StopReason::MaxTokens,
            "terminal" => StopReason::Terminal,
            other => return Err(malformed(format!("unknown stop_reason {other:?}"), &raw)),
        };
        let mut events = Vec::with_capacity(resp.events.len());
        for (i, ev) in resp.events.iter().enumerate() {
            if ev.position != i {
                return Err(malformed(format!("event {i} has position {}", ev.position), &raw));
            }
            self.remember(&ev.top_logprobs);
            let prediction = prediction_from_logprobs(&ev.top_logprobs, &raw)?;
            let text = match &ev.text {
                Some(t) => {
                    self.texts.lock().unwrap().insert(ev.token_id, t.clone());
                    t.clone()
                }
                None => self.token_text(ev.token_id).map_err(|_| {
                    malformed(format!("no text for emitted token {}", ev.token_id), &raw)
                })?,
            };
            events.push(GenerationEvent {
                token_id: ev.token_id,
                text,
                position: req.start_position + i,
                prediction: Arc::new(prediction),
            });
        }
        let joined: String = events.iter().map(|e| e.text.as_str()).collect();
        if joined != resp.text {
            return Err(malformed("event texts do not concatenate to `text`", &raw));
        }
        Ok(StepOutput {
            model_calls: events.len(),
            events,
            stop_reason,
            gate_hit: None,
        })
    }
}
