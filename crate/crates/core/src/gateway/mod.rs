//! Uniform access to teacher, student and scorer backends.
//!
//! The [`Gateway`] wraps registered [`Backend`]s with request validation,
//! retry with exponential backoff for transient failures, a per-backend cap on
//! in-flight requests, and an optional request journal.

mod http;
mod journal;
mod mock;
mod params;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::prompts::Prompt;

pub use http::{ChatChoice, ChatMessage, ChatRequest, ChatResponse, HttpBackend, HttpBackendConfig};
pub use journal::{Journal, JournalEntry, ReplayBackend, JOURNAL_FILE};
pub use mock::{MockBackend, MockCall};
pub use params::{DecodingMode, DecodingParams, ParamsError, DEFAULT_MAX_NEW_TOKENS};

/// One scored token: its text and natural-log probability (≤ 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub backend_id: String,
    pub latency_ms: u64,
}

/// Failure reported by a backend implementation.
#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: connection errors, rate limits, 5xx.
    #[error("transient: {0}")]
    Transient(String),
    #[error("context window exceeded: {0}")]
    ContextOverflow(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("{0}")]
    Fatal(String),
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    /// Returns exactly `params.n_samples` completions.
    fn complete(&self, prompt: &Prompt, params: &DecodingParams) -> Result<Vec<Completion>, BackendError>;

    /// Teacher-forced per-token log-probabilities of `continuation` after `prompt`.
    fn score_logprobs(&self, _prompt: &Prompt, _continuation: &str) -> Result<Vec<TokenLogprob>, BackendError> {
        Err(BackendError::Unsupported(format!("{} cannot score continuations", self.id())))
    }

    /// Context window in tokens, when known.
    fn context_window(&self) -> Option<usize> {
        None
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("backend `{0}` is not registered")]
    UnknownBackend(String),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("backend `{backend}`: gave up after {} attempts: {}", attempts.len(), attempts.join("; "))]
    Exhausted { backend: String, attempts: Vec<String> },
    #[error("backend `{0}` returned an empty completion")]
    EmptyCompletion(String),
    #[error("backend `{backend}`: prompt needs ~{needed} tokens but the context window is {window}")]
    ContextOverflow { backend: String, needed: usize, window: usize },
    #[error("backend `{backend}` rejected the prompt as too long: {message}")]
    ContextRejected { backend: String, message: String },
    #[error("backend `{0}` does not support log-probability scoring")]
    Capability(String),
    #[error("backend `{backend}`: {error}")]
    Backend { backend: String, error: BackendError },
}

impl GatewayError {
    /// Errors a caller may sensibly retry later (transport trouble).
    pub fn is_transport(&self) -> bool {
        matches!(self, GatewayError::Exhausted { .. })
    }
}

/// Attempts and backoff schedule for transient failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the n-th retry; the last entry repeats.
    pub backoff_ms: Vec<u64>,
    /// Relative jitter applied to each delay, in [0, 1).
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_ms: vec![1_000, 4_000, 16_000],
            jitter: 0.1,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            backoff_ms: vec![0],
            jitter: 0.0,
        }
    }

    fn delay(&self, retry: usize) -> Duration {
        let base = self
            .backoff_ms
            .get(retry)
            .or(self.backoff_ms.last())
            .copied()
            .unwrap_or(0) as f64;
        let factor = if self.jitter > 0.0 {
            1.0 + rand::thread_rng().gen_range(-self.jitter..self.jitter)
        } else {
            1.0
        };
        Duration::from_millis((base * factor).max(0.0) as u64)
    }
}

/// Counting semaphore bounding concurrent requests to one backend.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("limiter poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("limiter poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("limiter poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// Per-backend request counters.
#[derive(Debug, Default)]
pub struct BackendStats {
    pub requests: AtomicUsize,
    pub retries: AtomicUsize,
    pub failures: AtomicUsize,
}

impl BackendStats {
    pub fn retries(&self) -> usize {
        self.retries.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

struct Registered {
    backend: Arc<dyn Backend>,
    limiter: Limiter,
    stats: BackendStats,
}

pub struct Gateway {
    backends: BTreeMap<String, Registered>,
    retry: RetryPolicy,
    journal: Option<Journal>,
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new(RetryPolicy::default())
    }
}

impl Gateway {
    pub fn new(retry: RetryPolicy) -> Self {
        Gateway {
            backends: BTreeMap::new(),
            retry,
            journal: None,
        }
    }

    pub fn with_journal(mut self, journal: Journal) -> Self {
        self.journal = Some(journal);
        self
    }

    pub fn register(&mut self, name: impl Into<String>, backend: Arc<dyn Backend>, max_concurrency: usize) {
        self.backends.insert(
            name.into(),
            Registered {
                backend,
                limiter: Limiter::new(max_concurrency),
                stats: BackendStats::default(),
            },
        );
    }

    pub fn has_backend(&self, name: &str) -> bool {
        self.backends.contains_key(name)
    }

    pub fn stats(&self, name: &str) -> Option<&BackendStats> {
        self.backends.get(name).map(|r| &r.stats)
    }

    fn slot(&self, name: &str) -> Result<&Registered, GatewayError> {
        self.backends
            .get(name)
            .ok_or_else(|| GatewayError::UnknownBackend(name.to_string()))
    }

    /// Generates `params.n_samples` completions for `prompt`.
    pub fn complete(
        &self,
        backend: &str,
        prompt: &Prompt,
        params: &DecodingParams,
    ) -> Result<Vec<Completion>, GatewayError> {
        let slot = self.slot(backend)?;
        if prompt.is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        params.validate()?;
        if let Some(window) = slot.backend.context_window() {
            // rough estimate: four characters per token
            let needed = prompt.char_len().div_ceil(4) + params.max_new_tokens as usize;
            if needed > window {
                return Err(GatewayError::ContextOverflow {
                    backend: backend.to_string(),
                    needed,
                    window,
                });
            }
        }

        let completions = self.with_retries(backend, slot, |b| b.complete(prompt, params))?;
        if completions.len() != params.n_samples as usize {
            return Err(GatewayError::Backend {
                backend: backend.to_string(),
                error: BackendError::Malformed(format!(
                    "expected {} completions, got {}",
                    params.n_samples,
                    completions.len()
                )),
            });
        }
        for c in &completions {
            if c.text.trim().is_empty() {
                return Err(GatewayError::EmptyCompletion(backend.to_string()));
            }
            check_logprobs(backend, c.token_logprobs.as_deref().unwrap_or(&[]))?;
        }
        if let Some(journal) = &self.journal {
            journal.record(backend, prompt, params, &completions);
        }
        Ok(completions)
    }

    /// Per-token log-probabilities of `continuation` under `backend`.
    pub fn score_logprobs(
        &self,
        backend: &str,
        prompt: &Prompt,
        continuation: &str,
    ) -> Result<Vec<TokenLogprob>, GatewayError> {
        let slot = self.slot(backend)?;
        let out = self
            .with_retries(backend, slot, |b| b.score_logprobs(prompt, continuation))
            .map_err(|e| match e {
                GatewayError::Backend {
                    error: BackendError::Unsupported(_),
                    ..
                } => GatewayError::Capability(backend.to_string()),
                other => other,
            })?;
        check_logprobs(backend, &out)?;
        Ok(out)
    }

    fn with_retries<T>(
        &self,
        name: &str,
        slot: &Registered,
        call: impl Fn(&dyn Backend) -> Result<T, BackendError>,
    ) -> Result<T, GatewayError> {
        let mut attempts = Vec::new();
        let max = self.retry.max_attempts.max(1) as usize;
        for attempt in 0..max {
            if attempt > 0 {
                slot.stats.retries.fetch_add(1, Ordering::SeqCst);
                let wait = self.retry.delay(attempt - 1);
                log::warn!(
                    "backend `{name}`: retry {attempt}/{} in {wait:?} after: {}",
                    max - 1,
                    attempts.last().map(String::as_str).unwrap_or("")
                );
                std::thread::sleep(wait);
            }
            slot.stats.requests.fetch_add(1, Ordering::SeqCst);
            let result = {
                let _permit = slot.limiter.acquire();
                let started = Instant::now();
                let r = call(slot.backend.as_ref());
                log::trace!("backend `{name}` answered in {:?}", started.elapsed());
                r
            };
            match result {
                Ok(v) => return Ok(v),
                Err(BackendError::Transient(msg)) => attempts.push(msg),
                Err(BackendError::ContextOverflow(msg)) => {
                    slot.stats.failures.fetch_add(1, Ordering::SeqCst);
                    return Err(GatewayError::ContextRejected {
                        backend: name.to_string(),
                        message: msg,
                    });
                }
                Err(error) => {
                    slot.stats.failures.fetch_add(1, Ordering::SeqCst);
                    return Err(GatewayError::Backend {
                        backend: name.to_string(),
                        error,
                    });
                }
            }
        }
        slot.stats.failures.fetch_add(1, Ordering::SeqCst);
        Err(GatewayError::Exhausted {
            backend: name.to_string(),
            attempts,
        })
    }
}

fn check_logprobs(backend: &str, lps: &[TokenLogprob]) -> Result<(), GatewayError> {
    if let Some(bad) = lps.iter().find(|t| !(t.logprob <= 0.0)) {
        return Err(GatewayError::Backend {
            backend: backend.to_string(),
            error: BackendError::Malformed(format!(
                "log-probability {} for token {:?} is not ≤ 0",
                bad.logprob, bad.token
            )),
        });
    }
    Ok(())
}

pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
