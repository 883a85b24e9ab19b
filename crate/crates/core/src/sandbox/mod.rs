//! Code extraction and multi-language execution with pass/fail classification.

mod config;
mod extract;
mod fixtures;
mod process;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use config::{
    source_file_name, ExemptionRule, PatternKind, SandboxConfig, Toolchain, DEFAULT_TIMEOUT_MS, OUTPUT_CAP_BYTES,
};
pub use extract::{extract_code, fenced_blocks, FencedBlock};
pub use fixtures::{check_fixture, load_fixtures, Fixture, FixtureCheck, FixtureError};

use crate::lang::Language;
use config::CompiledRule;

/// Longest stderr excerpt kept in an outcome, in characters.
pub const STDERR_EXCERPT_CHARS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecStatus {
    Pass,
    Fail,
    EnvExemptPass,
}

impl ExecStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecStatus::Pass => "pass",
            ExecStatus::Fail => "fail",
            ExecStatus::EnvExemptPass => "env-exempt-pass",
        }
    }

    /// Exempted failures count as passing downstream.
    pub fn is_pass(self) -> bool {
        matches!(self, ExecStatus::Pass | ExecStatus::EnvExemptPass)
    }
}

impl std::str::FromStr for ExecStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pass" => Ok(ExecStatus::Pass),
            "fail" => Ok(ExecStatus::Fail),
            "env-exempt-pass" => Ok(ExecStatus::EnvExemptPass),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Extract,
    Compile,
    Run,
    Timeout,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Extract => "extract",
            Phase::Compile => "compile",
            Phase::Run => "run",
            Phase::Timeout => "timeout",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "extract" => Ok(Phase::Extract),
            "compile" => Ok(Phase::Compile),
            "run" => Ok(Phase::Run),
            "timeout" => Ok(Phase::Timeout),
            other => Err(format!("unknown phase {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    pub phase: Phase,
    pub exit_code: Option<i32>,
    pub stderr_excerpt: String,
    /// Sum over all phases.
    pub wall_ms: u64,
    /// Wall time of the last phase run; each phase has its own timeout.
    #[serde(default)]
    pub final_phase_ms: u64,
    /// Label of the exemption rule that turned a failure into a pass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemption: Option<String>,
}

impl ExecutionOutcome {
    fn extract_failure() -> Self {
        ExecutionOutcome {
            status: ExecStatus::Fail,
            phase: Phase::Extract,
            exit_code: None,
            stderr_excerpt: "no code extracted".into(),
            wall_ms: 0,
            final_phase_ms: 0,
            exemption: None,
        }
    }

    /// Checks the structural invariants between status, phase and exit code.
    pub fn is_consistent(&self) -> bool {
        let pass_ok = self.status != ExecStatus::Pass || (self.exit_code == Some(0) && self.phase == Phase::Run);
        let timeout_ok = self.phase != Phase::Timeout || self.status == ExecStatus::Fail;
        let exempt_ok = (self.status == ExecStatus::EnvExemptPass) == self.exemption.is_some();
        pass_ok && timeout_ok && exempt_ok
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum SandboxError {
    #[error("toolchain for {language} is not available (probe command `{probe}` failed)")]
    MissingToolchain { language: Language, probe: String },
    #[error("{0} is disabled in the sandbox configuration")]
    Disabled(Language),
    #[error("invalid exemption pattern {pattern:?}: {message}")]
    BadRule { pattern: String, message: String },
    #[error("parallelism must be at least 1")]
    BadParallelism,
    #[error("sandbox environment error: {0}")]
    Environment(String),
}

/// Per-call execution options.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOptions {
    pub timeout_ms: u64,
    pub apply_exemptions: bool,
}

impl ExecOptions {
    pub fn new(timeout_ms: u64) -> Self {
        ExecOptions {
            timeout_ms,
            apply_exemptions: true,
        }
    }

    pub fn without_exemptions(mut self) -> Self {
        self.apply_exemptions = false;
        self
    }
}

/// One unit of work for [`Sandbox::batch_execute`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecRequest {
    pub code: String,
    pub language: Language,
}

impl ExecRequest {
    pub fn new(code: impl Into<String>, language: Language) -> Self {
        ExecRequest {
            code: code.into(),
            language,
        }
    }
}

#[derive(Debug)]
pub struct Sandbox {
    config: SandboxConfig,
    rules: Vec<CompiledRule>,
    /// Probe results for enabled languages: `Err(probe command)` when missing.
    availability: BTreeMap<Language, Result<(), String>>,
    work_root: Option<PathBuf>,
}

/// Probes each enabled toolchain concurrently.
fn probe_all(config: &SandboxConfig) -> BTreeMap<Language, Result<(), String>> {
    let results = Mutex::new(BTreeMap::new());
    std::thread::scope(|s| {
        for lang in config.enabled_languages() {
            let results = &results;
            let probe = config.toolchain(lang).probe();
            s.spawn(move || {
                let ok = match tempfile::tempdir() {
                    Ok(dir) => process::run_phase(&probe, dir.path(), Duration::from_secs(30), 4096)
                        .map(|r| r.success())
                        .unwrap_or(false),
                    Err(_) => false,
                };
                let entry = if ok { Ok(()) } else { Err(probe.join(" ")) };
                results.lock().expect("probe results").insert(lang, entry);
            });
        }
    });
    results.into_inner().expect("probe results")
}

/// Name of the class `java` should launch: the public class if any, else
/// the class declaring `main`, else `Main`.
pub fn java_main_class(code: &str) -> String {
    let public = regex::Regex::new(r"(?m)^\s*public\s+(?:final\s+|abstract\s+)*class\s+([A-Za-z_$][\w$]*)").expect("regex");
    if let Some(c) = public.captures(code) {
        return c[1].to_string();
    }
    let class = regex::Regex::new(r"\bclass\s+([A-Za-z_$][\w$]*)").expect("regex");
    let main_at = code.find("static void main");
    let mut best = None;
    for c in class.captures_iter(code) {
        let at = c.get(0).expect("match").start();
        if main_at.is_none_or(|m| at < m) {
            best = Some(c[1].to_string());
        }
    }
    best.unwrap_or_else(|| "Main".into())
}

fn excerpt(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).chars().take(STDERR_EXCERPT_CHARS).collect()
}

impl Sandbox {
    /// Builds a sandbox and probes every enabled toolchain.
    pub fn new(config: SandboxConfig) -> Result<Self, SandboxError> {
        if config.parallelism == 0 {
            return Err(SandboxError::BadParallelism);
        }
        let rules = config
            .exemptions
            .iter()
            .cloned()
            .map(|r| {
                let pattern = r.pattern.clone();
                CompiledRule::new(r).map_err(|e| SandboxError::BadRule {
                    pattern,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let availability = probe_all(&config);
        for (lang, a) in &availability {
            if let Err(probe) = a {
                log::info!("sandbox: {lang} toolchain unavailable (`{probe}` failed)");
            }
        }
        Ok(Sandbox {
            config,
            rules,
            availability,
            work_root: None,
        })
    }

    /// Creates per-execution temp directories under `root` instead of the
    /// system temp directory.
    pub fn with_work_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.work_root = Some(root.into());
        self
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    pub fn is_available(&self, language: Language) -> bool {
        matches!(self.availability.get(&language), Some(Ok(())))
    }

    /// Configuration error naming the probe command when `language` cannot run.
    pub fn require(&self, language: Language) -> Result<(), SandboxError> {
        match self.availability.get(&language) {
            None => Err(SandboxError::Disabled(language)),
            Some(Ok(())) => Ok(()),
            Some(Err(probe)) => Err(SandboxError::MissingToolchain {
                language,
                probe: probe.clone(),
            }),
        }
    }

    pub fn default_options(&self) -> ExecOptions {
        ExecOptions::new(self.config.timeout_ms)
    }

    fn exemption_for(&self, language: Language, stderr: &[u8]) -> Option<String> {
        let text = String::from_utf8_lossy(stderr);
        self.rules
            .iter()
            .find(|r| r.matches(language, &text))
            .map(|r| r.label().to_string())
    }

    fn tempdir(&self) -> Result<tempfile::TempDir, SandboxError> {
        let b = {
            let mut b = tempfile::Builder::new();
            b.prefix("soda-exec-");
            b
        };
        match &self.work_root {
            Some(root) => b.tempdir_in(root),
            None => b.tempdir(),
        }
        .map_err(|e| SandboxError::Environment(format!("cannot create temp directory: {e}")))
    }

    /// Executes `code` with the configured timeout and exemptions.
    pub fn execute(&self, code: &str, language: Language) -> Result<ExecutionOutcome, SandboxError> {
        self.execute_with(code, language, self.default_options())
    }

    pub fn execute_with(
        &self,
        code: &str,
        language: Language,
        opts: ExecOptions,
    ) -> Result<ExecutionOutcome, SandboxError> {
        self.require(language)?;
        if code.trim().is_empty() {
            return Ok(ExecutionOutcome::extract_failure());
        }
        let dir = self.tempdir()?;
        let src = source_file_name(language);
        std::fs::write(dir.path().join(&src), code)
            .map_err(|e| SandboxError::Environment(format!("cannot write source: {e}")))?;
        let stem = src.rsplit_once('.').map(|(s, _)| s.to_string()).unwrap_or_else(|| src.clone());
        let main_class = if language == Language::Java {
            java_main_class(code)
        } else {
            stem.clone()
        };
        let subst = |cmd: &[String]| -> Vec<String> {
            cmd.iter()
                .map(|a| {
                    a.replace("{src}", &src)
                        .replace("{stem}", &stem)
                        .replace("{main_class}", &main_class)
                })
                .collect()
        };
        let toolchain = self.config.toolchain(language);
        let timeout = Duration::from_millis(opts.timeout_ms);
        let mut phases = Vec::with_capacity(2);
        if let Some(c) = &toolchain.compile_cmd {
            phases.push((Phase::Compile, subst(c)));
        }
        phases.push((Phase::Run, subst(&toolchain.run_cmd)));

        let mut wall_ms = 0;
        let mut last = None;
        for (phase, argv) in phases {
            let r = process::run_phase(&argv, dir.path(), timeout, OUTPUT_CAP_BYTES)
                .map_err(|e| SandboxError::Environment(format!("cannot run `{}`: {e}", argv.join(" "))))?;
            wall_ms += r.wall_ms;
            let stderr = if r.stderr.is_empty() { &r.stdout } else { &r.stderr };
            if r.timed_out {
                return Ok(ExecutionOutcome {
                    status: ExecStatus::Fail,
                    phase: Phase::Timeout,
                    exit_code: None,
                    stderr_excerpt: excerpt(stderr),
                    wall_ms,
                    final_phase_ms: r.wall_ms,
                    exemption: None,
                });
            }
            if !r.success() {
                let exemption = if opts.apply_exemptions {
                    self.exemption_for(language, &r.stderr)
                } else {
                    None
                };
                return Ok(ExecutionOutcome {
                    status: if exemption.is_some() {
                        ExecStatus::EnvExemptPass
                    } else {
                        ExecStatus::Fail
                    },
                    phase,
                    exit_code: r.exit_code,
                    stderr_excerpt: excerpt(stderr),
                    wall_ms,
                    final_phase_ms: r.wall_ms,
                    exemption,
                });
            }
            last = Some(r);
        }
        let r = last.expect("run phase always present");
        Ok(ExecutionOutcome {
            status: ExecStatus::Pass,
            phase: Phase::Run,
            exit_code: r.exit_code,
            stderr_excerpt: excerpt(&r.stderr),
            wall_ms,
            final_phase_ms: r.wall_ms,
            exemption: None,
        })
    }

    /// Executes every request with at most `parallelism` in flight. Results
    /// keep input order; one item's failure never affects another.
    pub fn batch_execute(
        &self,
        requests: &[ExecRequest],
        opts: ExecOptions,
        parallelism: usize,
    ) -> Vec<Result<ExecutionOutcome, SandboxError>> {
        if parallelism == 0 {
            return requests.iter().map(|_| Err(SandboxError::BadParallelism)).collect();
        }
        let slots: Vec<Mutex<Option<Result<ExecutionOutcome, SandboxError>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..parallelism.min(requests.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(req) = requests.get(i) else { break };
                    let out = self.execute_with(&req.code, req.language, opts);
                    *slots[i].lock().expect("slot") = Some(out);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot").expect("every slot filled"))
            .collect()
    }

    /// Directory where fixture cases for `language` live under `root`.
    pub fn fixture_dir(root: &Path, language: Language) -> PathBuf {
        root.join(language.as_str())
    }
}
