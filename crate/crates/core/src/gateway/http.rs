//! Chat-completions HTTP backend.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Completion, DecodingMode, DecodingParams, TokenLogprob};
use crate::prompts::Prompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpBackendConfig {
    pub name: String,
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the API key; the key itself is never stored.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub supports_logprobs: bool,
    #[serde(default)]
    pub context_window: Option<usize>,
    #[serde(default = "default_timeout_s")]
    pub request_timeout_s: u64,
}

fn default_concurrency() -> usize {
    4
}

fn default_timeout_s() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub n: u32,
    pub logprobs: bool,
}

impl ChatRequest {
    pub fn new(model: &str, prompt: &Prompt, params: &DecodingParams) -> Self {
        let mut messages = Vec::with_capacity(2);
        if !prompt.system.is_empty() {
            messages.push(ChatMessage {
                role: "system".into(),
                content: prompt.system.clone(),
            });
        }
        messages.push(ChatMessage {
            role: "user".into(),
            content: prompt.user.clone(),
        });
        let (temperature, top_p) = match params.mode {
            DecodingMode::Greedy => (0.0, 1.0),
            DecodingMode::Nucleus => (params.temperature, params.top_p),
        };
        ChatRequest {
            model: model.to_string(),
            messages,
            temperature,
            top_p,
            max_tokens: params.max_new_tokens,
            n: params.n_samples,
            logprobs: params.logprobs,
        }
    }

    /// The prompt carried by this request.
    pub fn prompt(&self) -> Prompt {
        let pick = |role: &str| {
            self.messages
                .iter()
                .find(|m| m.role == role)
                .map(|m| m.content.clone())
                .unwrap_or_default()
        };
        Prompt::new(pick("system"), pick("user"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatChoice {
    pub message: ChatMessage,
    #[serde(default)]
    pub logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceLogprobs {
    #[serde(default)]
    pub content: Vec<TokenLogprob>,
}

#[derive(Debug, Deserialize)]
struct LegacyResponse {
    choices: Vec<LegacyChoice>,
}

#[derive(Debug, Deserialize)]
struct LegacyChoice {
    logprobs: LegacyLogprobs,
}

#[derive(Debug, Deserialize)]
struct LegacyLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("name", &self.config.name)
            .field("base_url", &self.config.base_url)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Fatal(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_s))
            .build()
            .map_err(|e| BackendError::Fatal(e.to_string()))?;
        Ok(HttpBackend {
            config,
            client,
            api_key,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.base_url.trim_end_matches('/'))
    }

    fn post(&self, path: &str, body: &impl Serialize) -> Result<String, BackendError> {
        let mut req = self.client.post(self.url(path)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transient(e.to_string()))?;
        if status.is_success() {
            return Ok(text);
        }
        let msg = format!("HTTP {status}: {}", text.chars().take(300).collect::<String>());
        if status.as_u16() == 429 || status.is_server_error() {
            Err(BackendError::Transient(msg))
        } else if text.contains("context_length") || text.contains("maximum context") {
            Err(BackendError::ContextOverflow(msg))
        } else {
            Err(BackendError::Fatal(msg))
        }
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.config.name
    }

    fn complete(&self, prompt: &Prompt, params: &DecodingParams) -> Result<Vec<Completion>, BackendError> {
        let started = Instant::now();
        let mut p = params.clone();
        p.logprobs = params.logprobs && self.config.supports_logprobs;
        let body = ChatRequest::new(&self.config.model, prompt, &p);
        let text = self.post("chat/completions", &body)?;
        let resp: ChatResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        let latency_ms = started.elapsed().as_millis() as u64;
        Ok(resp
            .choices
            .into_iter()
            .map(|c| Completion {
                text: c.message.content,
                token_logprobs: c.logprobs.map(|l| l.content),
                backend_id: self.config.name.clone(),
                latency_ms,
            })
            .collect())
    }

    /// Uses the legacy completions endpoint with `echo` to score a
    /// continuation token by token.
    fn score_logprobs(&self, prompt: &Prompt, continuation: &str) -> Result<Vec<TokenLogprob>, BackendError> {
        if !self.config.supports_logprobs {
            return Err(BackendError::Unsupported(format!(
                "{} is not configured with supports_logprobs",
                self.config.name
            )));
        }
        if continuation.is_empty() {
            return Ok(Vec::new());
        }
        let context = format!("{}\n\n{}", prompt.system, prompt.user);
        let body = serde_json::json!({
            "model": self.config.model,
            "prompt": format!("{context}{continuation}"),
            "max_tokens": 0,
            "echo": true,
            "logprobs": 1,
        });
        let text = self.post("completions", &body)?;
        let resp: LegacyResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        let lp = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Malformed("no choices".into()))?
            .logprobs;
        Ok(lp
            .tokens
            .into_iter()
            .zip(lp.token_logprobs)
            .zip(lp.text_offset)
            .filter(|(_, off)| *off >= context.len())
            .map(|((token, logprob), _)| TokenLogprob {
                token,
                logprob: logprob.unwrap_or(0.0),
            })
            .collect())
    }

    fn context_window(&self) -> Option<usize> {
        self.config.context_window
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_shape() {
        let p = Prompt::new("be helpful", "write `f` {x}\n\"quoted\"");
        let req = ChatRequest::new("m", &p, &DecodingParams::nucleus(10));
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(v["messages"][0]["role"], "system");
        assert_eq!(v["messages"][1]["content"], "write `f` {x}\n\"quoted\"");
        assert_eq!(v["temperature"], 0.2);
        assert_eq!(v["top_p"], 0.95);
        assert_eq!(v["n"], 10);
        assert_eq!(v["max_tokens"], 512);
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), 7);

        let greedy = ChatRequest::new("m", &p, &DecodingParams::greedy());
        assert_eq!(greedy.temperature, 0.0);
        let back: ChatRequest = serde_json::from_str(&serde_json::to_string(&greedy).unwrap()).unwrap();
        assert_eq!(back.prompt(), p);
    }

    #[test]
    fn response_parsing() {
        let raw = r#"{"id":"x","choices":[{"index":0,"message":{"role":"assistant","content":"hi"},
            "logprobs":{"content":[{"token":"hi","logprob":-0.1,"bytes":[104,105],"top_logprobs":[]}]}}]}"#;
        let r: ChatResponse = serde_json::from_str(raw).unwrap();
        assert_eq!(r.choices[0].message.content, "hi");
        assert_eq!(r.choices[0].logprobs.as_ref().unwrap().content[0].logprob, -0.1);
    }
}
