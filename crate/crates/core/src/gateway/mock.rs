//! Deterministic in-process backend for tests and offline runs.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::{Backend, BackendError, Completion, DecodingMode, DecodingParams, TokenLogprob};
use crate::prompts::Prompt;
use crate::rng;

/// What a mock responder sees for one sample.
#[derive(Debug)]
pub struct MockCall<'a> {
    pub prompt: &'a Prompt,
    pub params: &'a DecodingParams,
    pub sample: usize,
    /// Zero under greedy decoding; otherwise derived from the request seed,
    /// the prompt and the sample index.
    pub sample_seed: u64,
}

type Responder = dyn Fn(&MockCall<'_>) -> Result<String, BackendError> + Send + Sync;
type CallHook = dyn Fn(usize) + Send + Sync;

pub struct MockBackend {
    id: String,
    responder: Box<Responder>,
    token_logprob: f64,
    scoring: bool,
    context_window: Option<usize>,
    latency: Duration,
    failures: Mutex<VecDeque<BackendError>>,
    on_call: Option<Box<CallHook>>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    ledger: Mutex<Vec<f64>>,
}

impl std::fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockBackend").field("id", &self.id).finish_non_exhaustive()
    }
}

impl MockBackend {
    pub fn new(
        id: impl Into<String>,
        responder: impl Fn(&MockCall<'_>) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        MockBackend {
            id: id.into(),
            responder: Box::new(responder),
            token_logprob: -0.5,
            scoring: true,
            context_window: None,
            latency: Duration::ZERO,
            failures: Mutex::new(VecDeque::new()),
            on_call: None,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            ledger: Mutex::new(Vec::new()),
        }
    }

    /// Always answers `text`.
    pub fn fixed(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(id, move |_| Ok(text.clone()))
    }

    /// Answers by prompt content hash, falling back to `fallback` if given.
    pub fn scripted(
        id: impl Into<String>,
        script: HashMap<String, String>,
        fallback: Option<String>,
    ) -> Self {
        Self::new(id, move |call| {
            script
                .get(&call.prompt.sha256())
                .or(fallback.as_ref())
                .cloned()
                .ok_or_else(|| BackendError::Fatal("no scripted reply for prompt".into()))
        })
    }

    /// Greedy picks the first candidate; sampling picks one per sample seed.
    pub fn sampler(id: impl Into<String>, candidates: Vec<String>) -> Self {
        assert!(!candidates.is_empty());
        Self::new(id, move |call| {
            let i = (call.sample_seed % candidates.len() as u64) as usize;
            Ok(candidates[i].clone())
        })
    }

    /// Failures returned, in order, before the responder is consulted.
    pub fn with_failures(self, failures: Vec<BackendError>) -> Self {
        *self.failures.lock().unwrap() = failures.into();
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn with_token_logprob(mut self, lp: f64) -> Self {
        self.token_logprob = lp;
        self
    }

    pub fn with_context_window(mut self, tokens: usize) -> Self {
        self.context_window = Some(tokens);
        self
    }

    pub fn without_scoring(mut self) -> Self {
        self.scoring = false;
        self
    }

    /// Invoked with the 1-based call count on every `complete` call.
    pub fn on_call(mut self, hook: impl Fn(usize) + Send + Sync + 'static) -> Self {
        self.on_call = Some(Box::new(hook));
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    /// Sum of token log-probabilities of every scored continuation, in call order.
    pub fn scored_sequence_logprobs(&self) -> Vec<f64> {
        self.ledger.lock().unwrap().clone()
    }

    fn tokens(&self, text: &str) -> Vec<TokenLogprob> {
        text.split_whitespace()
            .map(|t| TokenLogprob {
                token: t.to_string(),
                logprob: self.token_logprob,
            })
            .collect()
    }

    fn enter(&self) -> InFlight<'_> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        InFlight(&self.in_flight)
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &Prompt, params: &DecodingParams) -> Result<Vec<Completion>, BackendError> {
        let _guard = self.enter();
        let started = Instant::now();
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        if let Some(hook) = &self.on_call {
            hook(n);
        }
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        if let Some(err) = self.failures.lock().unwrap().pop_front() {
            return Err(err);
        }
        let prompt_sha = prompt.sha256();
        (0..params.n_samples as usize)
            .map(|sample| {
                let sample_seed = match params.mode {
                    DecodingMode::Greedy => 0,
                    DecodingMode::Nucleus => rng::subseed(
                        params.seed.unwrap_or(0),
                        rng::NUCLEUS,
                        &[&prompt_sha, &sample.to_string()],
                    ),
                };
                let call = MockCall {
                    prompt,
                    params,
                    sample,
                    sample_seed,
                };
                let text = (self.responder)(&call)?;
                let token_logprobs = params.logprobs.then(|| self.tokens(&text));
                Ok(Completion {
                    text,
                    token_logprobs,
                    backend_id: self.id.clone(),
                    latency_ms: started.elapsed().as_millis() as u64,
                })
            })
            .collect()
    }

    fn score_logprobs(&self, _prompt: &Prompt, continuation: &str) -> Result<Vec<TokenLogprob>, BackendError> {
        if !self.scoring {
            return Err(BackendError::Unsupported(format!("{} cannot score", self.id)));
        }
        let toks = self.tokens(continuation);
        self.ledger
            .lock()
            .unwrap()
            .push(toks.iter().map(|t| t.logprob).sum());
        Ok(toks)
    }

    fn context_window(&self) -> Option<usize> {
        self.context_window
    }
}
