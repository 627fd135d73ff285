//! Blocking JSON-over-HTTP client shared by the remote model and verifier.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub timeout_ms: u64,
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Delay before retry `n` is `backoff_ms * 2^n`.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_ms: 200,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HttpError {
    Timeout { attempts: u32 },
    Transport { message: String, attempts: u32 },
    Status { status: u16, body: String, attempts: u32 },
    Malformed { reason: String, payload: String },
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct JsonClient {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
    config: HttpConfig,
    slots: Semaphore,
    retries: AtomicU64,
}

impl std::fmt::Debug for JsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonClient")
            .field("base", &self.base)
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

fn is_timeout(err: &ureq::Transport) -> bool {
    let mut source: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(err);
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            return matches!(
                io.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            );
        }
        source = e.source();
    }
    false
}

impl JsonClient {
    pub fn new(base: impl Into<String>, token: Option<String>, config: HttpConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build();
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            token,
            agent,
            slots: Semaphore {
                free: Mutex::new(config.max_in_flight.max(1)),
                cv: Condvar::new(),
            },
            config,
            retries: AtomicU64::new(0),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    /// Total retries performed by this client so far.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    /// POSTs `body` to `path` and returns the raw response text, retrying
    /// timeouts, transport failures, 429 and 5xx responses.
    pub fn post_raw<B: Serialize>(&self, path: &str, body: &B) -> Result<String, HttpError> {
        let payload = serde_json::to_string(body).map_err(|e| HttpError::Malformed {
            reason: format!("request encoding: {e}"),
            payload: String::new(),
        })?;
        let url = format!("{}{}", self.base, path);
        let _slot = self.slots.acquire();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let mut req = self.agent.post(&url).set("Content-Type", "application/json");
            if let Some(token) = &self.token {
                req = req.set("Authorization", &format!("Bearer {token}"));
            }
            let failure = match req.send_string(&payload) {
                Ok(resp) => {
                    return resp.into_string().map_err(|e| HttpError::Transport {
                        message: format!("reading body: {e}"),
                        attempts: attempt,
                    })
                }
                Err(ureq::Error::Status(status, resp)) => {
                    let body = resp.into_string().unwrap_or_default();
                    let failure = HttpError::Status {
                        status,
                        body,
                        attempts: attempt,
                    };
                    if status != 429 && status < 500 {
                        return Err(failure);
                    }
                    failure
                }
                Err(ureq::Error::Transport(t)) if is_timeout(&t) => {
                    HttpError::Timeout { attempts: attempt }
                }
                Err(ureq::Error::Transport(t)) => HttpError::Transport {
                    message: t.to_string(),
                    attempts: attempt,
                },
            };
            if attempt > self.config.max_retries {
                return Err(failure);
            }
            self.retries.fetch_add(1, Ordering::Relaxed);
            let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
            std::thread::sleep(Duration::from_millis(delay));
        }
    }

    pub fn post_json<B: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<(T, String), HttpError> {
        let raw = self.post_raw(path, body)?;
        match serde_json::from_str(&raw) {
            Ok(v) => Ok((v, raw)),
            Err(e) => Err(HttpError::Malformed {
                reason: e.to_string(),
                payload: raw,
            }),
        }
    }
}
