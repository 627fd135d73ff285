use serde::{Deserialize, Serialize};

use super::{Verifier, VerifyError};
use crate::http::{HttpConfig, HttpError, JsonClient};

pub const PRM_URL_ENV: &str = "EGB_PRM_URL";
pub const PRM_TOKEN_ENV: &str = "EGB_PRM_TOKEN";

/// Domain of the scores a PRM server returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Already in `[0, 1]`; anything else is rejected.
    #[default]
    Probability,
    /// Real-valued logits, mapped through the logistic function.
    Logit,
}

#[derive(Debug, Serialize)]
struct ScoreRequest<'a> {
    context: &'a str,
    steps: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct ScoreResponse {
    step_scores: Vec<f64>,
    #[allow(dead_code)]
    scorer_id: String,
}

/// Process-reward model served over HTTP (`POST /v1/score`).
#[derive(Debug)]
pub struct RemoteVerifier {
    id: String,
    client: JsonClient,
    kind: ScoreKind,
}

impl From<HttpError> for VerifyError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Timeout { attempts } => VerifyError::Timeout { attempts },
            HttpError::Transport { message, attempts } => VerifyError::Transport { message, attempts },
            HttpError::Status {
                status,
                body,
                attempts,
            } => VerifyError::HttpStatus {
                status,
                body,
                attempts,
            },
            HttpError::Malformed { reason, payload } => VerifyError::MalformedResponse { reason, payload },
        }
    }
}

impl RemoteVerifier {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, kind: ScoreKind, http: HttpConfig) -> Self {
        let client = JsonClient::new(endpoint, token, http);
        Self {
            id: format!("remote:{}", client.base_url()),
            client,
            kind,
        }
    }

    /// Reads `EGB_PRM_URL` and the optional `EGB_PRM_TOKEN`.
    pub fn from_env(kind: ScoreKind, http: HttpConfig) -> Result<Self, VerifyError> {
        let url = std::env::var(PRM_URL_ENV)
            .map_err(|_| VerifyError::Input(format!("{PRM_URL_ENV} is not set")))?;
        Ok(Self::new(url, std::env::var(PRM_TOKEN_ENV).ok(), kind, http))
    }

    pub fn retries(&self) -> u64 {
        self.client.retries()
    }
}

impl Verifier for RemoteVerifier {
    fn verifier_id(&self) -> &str {
        &self.id
    }

    fn score_steps(&self, context: &str, steps: &[&str]) -> Result<Vec<f64>, VerifyError> {
        let (resp, raw): (ScoreResponse, String) =
            self.client.post_json("/v1/score", &ScoreRequest { context, steps })?;
        if resp.step_scores.len() != steps.len() {
            return Err(VerifyError::Count {
                expected: steps.len(),
                got: resp.step_scores.len(),
            });
        }
        resp.step_scores
            .into_iter()
            .map(|s| {
                let value = match self.kind {
                    ScoreKind::Probability => s,
                    ScoreKind::Logit => 1.0 / (1.0 + (-s).exp()),
                };
                if value.is_finite() && (0.0..=1.0).contains(&value) {
                    Ok(value)
                } else {
                    Err(VerifyError::OutOfRange {
                        value: s,
                        scorer: format!("{} ({raw})", self.id),
                    })
                }
            })
            .collect()
    }
}
