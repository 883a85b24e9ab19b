use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{DEFAULT_NGRAM, DEFAULT_THRESHOLD};
use crate::curriculum::RatioPlan;
use crate::gateway::{DecodingMode, DecodingParams, HttpBackendConfig, RetryPolicy, DEFAULT_MAX_NEW_TOKENS};
use crate::lang::Language;
use crate::objectives::TrainingManifest;
use crate::sandbox::SandboxConfig;

/// Built-in offline backend behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Persona {
    Teacher,
    Student,
    Scorer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockBackendConfig {
    pub name: String,
    pub persona: Persona,
    #[serde(default = "default_mock_concurrency")]
    pub max_concurrency: usize,
    /// Artificial per-call latency.
    #[serde(default)]
    pub latency_ms: u64,
}

fn default_mock_concurrency() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Http(HttpBackendConfig),
    Mock(MockBackendConfig),
}

impl BackendSpec {
    pub fn name(&self) -> &str {
        match self {
            BackendSpec::Http(c) => &c.name,
            BackendSpec::Mock(c) => &c.name,
        }
    }

    pub fn max_concurrency(&self) -> usize {
        match self {
            BackendSpec::Http(c) => c.max_concurrency,
            BackendSpec::Mock(c) => c.max_concurrency,
        }
    }
}

/// Decoding defaults for generation calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingConfig {
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    /// Teacher solutions (correct and faulty).
    #[serde(default = "greedy")]
    pub teacher: DecodingMode,
    /// Teacher question generation during update.
    #[serde(default = "nucleus")]
    pub generation: DecodingMode,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
}

fn default_max_new_tokens() -> u32 {
    DEFAULT_MAX_NEW_TOKENS
}
fn greedy() -> DecodingMode {
    DecodingMode::Greedy
}
fn nucleus() -> DecodingMode {
    DecodingMode::Nucleus
}
fn default_temperature() -> f64 {
    0.2
}
fn default_top_p() -> f64 {
    0.95
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig {
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            teacher: DecodingMode::Greedy,
            generation: DecodingMode::Nucleus,
            temperature: 0.2,
            top_p: 0.95,
        }
    }
}

impl DecodingConfig {
    pub fn params(&self, mode: DecodingMode) -> DecodingParams {
        let mut p = match mode {
            DecodingMode::Greedy => DecodingParams::greedy(),
            DecodingMode::Nucleus => DecodingParams::nucleus(1),
        };
        if mode == DecodingMode::Nucleus {
            p.temperature = self.temperature;
            p.top_p = self.top_p;
        }
        p.with_max_new_tokens(self.max_new_tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_iterations")]
    pub iterations: u32,
    /// JSONL file of seed questions; relative paths resolve against the
    /// config file's directory.
    pub corpus_import: PathBuf,
    #[serde(default = "default_language")]
    pub language: Language,
    pub backends: Vec<BackendSpec>,
    pub teacher: String,
    pub student: String,
    pub scorer: String,
    #[serde(default)]
    pub ratio: RatioPlan,
    #[serde(default = "default_threshold")]
    pub dedup_threshold: f64,
    #[serde(default = "default_ngram")]
    pub ngram: usize,
    #[serde(default = "default_split")]
    pub split_ratio: [u32; 2],
    #[serde(default)]
    pub sandbox: SandboxConfig,
    #[serde(default)]
    pub decoding: DecodingConfig,
    #[serde(default)]
    pub training: TrainingManifest,
    #[serde(default = "default_annotation_size")]
    pub annotation_size: usize,
    #[serde(default = "default_success")]
    pub stage_success_threshold: f64,
    /// Work items processed concurrently within a stage.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_iterations() -> u32 {
    3
}
fn default_language() -> Language {
    Language::Python
}
fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_ngram() -> usize {
    DEFAULT_NGRAM
}
fn default_split() -> [u32; 2] {
    [8, 2]
}
fn default_annotation_size() -> usize {
    crate::feedback::DEFAULT_ANNOTATION_SIZE
}
fn default_success() -> f64 {
    0.9
}
fn default_parallelism() -> usize {
    8
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_json(path: &Path, text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Reads and validates a config file, resolving `corpus_import`
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(path, &text)?;
        if cfg.corpus_import.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.corpus_import = dir.join(&cfg.corpus_import);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn split(&self) -> (u32, u32) {
        (self.split_ratio[0], self.split_ratio[1])
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.run_name.trim().is_empty() {
            return Err(invalid("run_name", "must not be empty"));
        }
        if self.iterations == 0 {
            return Err(invalid("iterations", "must be at least 1"));
        }
        let mut names = HashSet::new();
        for b in &self.backends {
            if !names.insert(b.name()) {
                return Err(invalid("backends", format!("duplicate backend name `{}`", b.name())));
            }
            if b.max_concurrency() == 0 {
                return Err(invalid("backends", format!("`{}`: max_concurrency must be positive", b.name())));
            }
        }
        for (field, name) in [("teacher", &self.teacher), ("student", &self.student), ("scorer", &self.scorer)] {
            if !names.contains(name.as_str()) {
                return Err(invalid(field, format!("backend `{name}` is not declared in `backends`")));
            }
        }
        self.ratio.validate().map_err(|e| invalid("ratio", e.to_string()))?;
        if !(self.dedup_threshold > 0.0 && self.dedup_threshold <= 1.0) {
            return Err(invalid("dedup_threshold", "must be in (0, 1]"));
        }
        if self.ngram == 0 {
            return Err(invalid("ngram", "must be at least 1"));
        }
        if self.split_ratio.contains(&0) {
            return Err(invalid("split_ratio", "both parts must be positive"));
        }
        if !(0.0..=1.0).contains(&self.stage_success_threshold) {
            return Err(invalid("stage_success_threshold", "must be in [0, 1]"));
        }
        if self.parallelism == 0 {
            return Err(invalid("parallelism", "must be at least 1"));
        }
        if self.sandbox.parallelism == 0 || self.sandbox.timeout_ms == 0 {
            return Err(invalid("sandbox", "parallelism and timeout_ms must be positive"));
        }
        if self.sandbox.disabled.contains(&self.language) {
            return Err(invalid("language", format!("{} is disabled in the sandbox block", self.language)));
        }
        if !(self.training.beta > 0.0 && self.training.beta.is_finite()) {
            return Err(invalid("training", "beta must be positive"));
        }
        if self.retry.max_attempts == 0 {
            return Err(invalid("retry", "max_attempts must be at least 1"));
        }
        if !(self.decoding.temperature >= 0.0 && self.decoding.top_p > 0.0 && self.decoding.top_p <= 1.0) {
            return Err(invalid("decoding", "temperature must be ≥ 0 and top_p in (0, 1]"));
        }
        Ok(())
    }

    /// A runnable offline configuration with built-in mock backends.
    pub fn demo(run_name: &str, corpus_import: PathBuf) -> Self {
        let mock = |name: &str, persona| {
            BackendSpec::Mock(MockBackendConfig {
                name: name.into(),
                persona,
                max_concurrency: 8,
                latency_ms: 0,
            })
        };
        RunConfig {
            run_name: run_name.into(),
            seed: 0,
            iterations: 3,
            corpus_import,
            language: Language::Python,
            backends: vec![
                mock("teacher", Persona::Teacher),
                mock("student", Persona::Student),
                mock("scorer", Persona::Scorer),
            ],
            teacher: "teacher".into(),
            student: "student".into(),
            scorer: "scorer".into(),
            ratio: RatioPlan::default(),
            dedup_threshold: DEFAULT_THRESHOLD,
            ngram: DEFAULT_NGRAM,
            split_ratio: [8, 2],
            sandbox: SandboxConfig::default(),
            decoding: DecodingConfig::default(),
            training: TrainingManifest::default(),
            annotation_size: default_annotation_size(),
            stage_success_threshold: 0.9,
            parallelism: 8,
            retry: RetryPolicy::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "run_name": "r",
        "corpus_import": "seeds.jsonl",
        "backends": [
            {"kind": "mock", "name": "t", "persona": "teacher"},
            {"kind": "http", "name": "s", "base_url": "http://localhost:1", "model": "m"}
        ],
        "teacher": "t", "student": "s", "scorer": "t"
    }"#;

    #[test]
    fn defaults_follow_the_documented_setup() {
        let c = RunConfig::from_json(Path::new("c.json"), MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.iterations, 3);
        assert_eq!((c.ratio.easy, c.ratio.medium, c.ratio.hard), (1, 1, 2));
        assert_eq!(c.dedup_threshold, 0.7);
        assert_eq!(c.split(), (8, 2));
        assert_eq!(c.training.epochs, 3);
        assert!(matches!(&c.backends[1], BackendSpec::Http(h) if h.max_concurrency == 4));
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = RunConfig::from_json(Path::new("c.json"), MINIMAL).unwrap();
        c.iterations = 0;
        assert!(matches!(c.validate(), Err(ConfigError::Invalid { field: "iterations", .. })));
        c.iterations = 1;
        c.scorer = "nobody".into();
        assert!(matches!(c.validate(), Err(ConfigError::Invalid { field: "scorer", .. })));
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replacen("\"run_name\"", "\"colour\": 1, \"run_name\"", 1);
        assert!(matches!(RunConfig::from_json(Path::new("c.json"), &bad), Err(ConfigError::Parse { .. })));
        let bad_backend = MINIMAL.replacen("\"persona\": \"teacher\"", "\"persona\": \"teacher\", \"x\": 1", 1);
        assert!(RunConfig::from_json(Path::new("c.json"), &bad_backend).is_err());
    }

    #[test]
    fn demo_config_is_valid() {
        RunConfig::demo("d", "seeds.jsonl".into()).validate().unwrap();
    }
}
