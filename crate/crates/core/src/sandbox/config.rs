use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::lang::Language;

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;
pub const OUTPUT_CAP_BYTES: usize = 64 * 1024;

/// Commands for one language. Arguments may contain `{src}` (source file
/// name), `{stem}` (file name without extension) and `{main_class}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Toolchain {
    #[serde(default)]
    pub compile_cmd: Option<Vec<String>>,
    pub run_cmd: Vec<String>,
    /// Command whose success means the toolchain is installed.
    #[serde(default)]
    pub probe_cmd: Option<Vec<String>>,
}

fn argv(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

impl Toolchain {
    pub fn default_for(language: Language) -> Toolchain {
        let (compile, run, probe): (Option<&[&str]>, &[&str], &[&str]) = match language {
            Language::Python => (None, &["python3", "{src}"], &["python3", "--version"]),
            Language::Java => (Some(&["javac", "{src}"]), &["java", "{main_class}"], &["javac", "-version"]),
            Language::Javascript => (None, &["node", "{src}"], &["node", "--version"]),
            Language::C => (Some(&["gcc", "{src}", "-o", "a"]), &["./a"], &["gcc", "--version"]),
            Language::Cpp => (Some(&["g++", "{src}", "-o", "a"]), &["./a"], &["g++", "--version"]),
            Language::Go => (None, &["go", "run", "{src}"], &["go", "version"]),
            Language::Typescript => (Some(&["tsc", "{src}"]), &["node", "{stem}.js"], &["tsc", "--version"]),
        };
        Toolchain {
            compile_cmd: compile.map(argv),
            run_cmd: argv(run),
            probe_cmd: Some(argv(probe)),
        }
    }

    /// The probe command, defaulting to the first word of the compile (or
    /// run) command with `--version`.
    pub fn probe(&self) -> Vec<String> {
        if let Some(p) = &self.probe_cmd {
            return p.clone();
        }
        let first = self
            .compile_cmd
            .as_ref()
            .and_then(|c| c.first())
            .or_else(|| self.run_cmd.first())
            .cloned()
            .unwrap_or_default();
        vec![first, "--version".into()]
    }
}

/// Source file name written into the temp directory.
pub fn source_file_name(language: Language) -> String {
    match language {
        Language::Java => "Main.java".into(),
        other => format!("main.{}", other.extension()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    #[default]
    Substring,
    Regex,
}

/// A stderr pattern whose presence marks a failure as an environment issue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExemptionRule {
    pub language: Language,
    pub pattern: String,
    pub label: String,
    #[serde(default)]
    pub kind: PatternKind,
}

impl ExemptionRule {
    pub fn substring(language: Language, pattern: &str, label: &str) -> Self {
        ExemptionRule {
            language,
            pattern: pattern.into(),
            label: label.into(),
            kind: PatternKind::Substring,
        }
    }

    pub fn defaults() -> Vec<ExemptionRule> {
        vec![
            ExemptionRule::substring(Language::Python, "No module named", "missing-python-module"),
            ExemptionRule::substring(
                Language::Java,
                "should be declared in a file named",
                "java-public-class-filename",
            ),
        ]
    }
}

/// Exemption rules compiled for matching.
#[derive(Debug, Clone)]
pub(crate) struct CompiledRule {
    rule: ExemptionRule,
    regex: Option<Regex>,
}

impl CompiledRule {
    pub(crate) fn new(rule: ExemptionRule) -> Result<Self, regex::Error> {
        let regex = match rule.kind {
            PatternKind::Substring => None,
            PatternKind::Regex => Some(Regex::new(&rule.pattern)?),
        };
        Ok(CompiledRule { rule, regex })
    }

    pub(crate) fn matches(&self, language: Language, stderr: &str) -> bool {
        self.rule.language == language
            && match &self.regex {
                Some(re) => re.is_match(stderr),
                None => stderr.contains(&self.rule.pattern),
            }
    }

    pub(crate) fn label(&self) -> &str {
        &self.rule.label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandboxConfig {
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Per-language overrides of the default toolchain commands.
    #[serde(default)]
    pub toolchains: BTreeMap<Language, Toolchain>,
    #[serde(default = "ExemptionRule::defaults")]
    pub exemptions: Vec<ExemptionRule>,
    /// Languages switched off entirely; nothing is probed for them.
    #[serde(default)]
    pub disabled: Vec<Language>,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

fn default_parallelism() -> usize {
    4
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            timeout_ms: DEFAULT_TIMEOUT_MS,
            parallelism: default_parallelism(),
            toolchains: BTreeMap::new(),
            exemptions: ExemptionRule::defaults(),
            disabled: Vec::new(),
        }
    }
}

impl SandboxConfig {
    pub fn toolchain(&self, language: Language) -> Toolchain {
        self.toolchains
            .get(&language)
            .cloned()
            .unwrap_or_else(|| Toolchain::default_for(language))
    }

    pub fn enabled_languages(&self) -> Vec<Language> {
        Language::ALL
            .into_iter()
            .filter(|l| !self.disabled.contains(l))
            .collect()
    }
}
