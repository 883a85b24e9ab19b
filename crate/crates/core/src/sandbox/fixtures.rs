//! Loading the `fixtures/<language>/<case>.{src,expected_status}` corpus.

use std::path::{Path, PathBuf};

use std::time::Instant;

use super::{ExecOptions, ExecStatus, ExecutionOutcome, Phase, Sandbox, SandboxError};
use crate::lang::Language;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fixture {
    pub language: Language,
    pub case: String,
    pub code: String,
    pub expected_status: ExecStatus,
    /// When given, the phase must also match.
    pub expected_phase: Option<Phase>,
}

impl Fixture {
    pub fn is_timeout_case(&self) -> bool {
        self.expected_phase == Some(Phase::Timeout)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

fn read(path: &Path) -> Result<String, FixtureError> {
    std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses an expected-status file: `<status> [<phase>]`.
fn parse_expected(path: &Path, text: &str) -> Result<(ExecStatus, Option<Phase>), FixtureError> {
    let bad = |message: String| FixtureError::Malformed {
        path: path.to_path_buf(),
        message,
    };
    let mut words = text.split_whitespace();
    let status = words
        .next()
        .ok_or_else(|| bad("empty expected_status".into()))?
        .parse::<ExecStatus>()
        .map_err(bad)?;
    let phase = words.next().map(|w| w.parse::<Phase>()).transpose().map_err(bad)?;
    if let Some(extra) = words.next() {
        return Err(bad(format!("unexpected token {extra:?}")));
    }
    Ok((status, phase))
}

/// Loads every fixture under `root`, sorted by language then case name.
/// Language directories that do not exist are skipped.
pub fn load_fixtures(root: &Path) -> Result<Vec<Fixture>, FixtureError> {
    let mut out = Vec::new();
    for language in Language::ALL {
        let dir = root.join(language.as_str());
        if !dir.is_dir() {
            continue;
        }
        let entries = std::fs::read_dir(&dir).map_err(|source| FixtureError::Io {
            path: dir.clone(),
            source,
        })?;
        let mut cases: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".src").map(str::to_string)
            })
            .collect();
        cases.sort();
        for case in cases {
            let code = read(&dir.join(format!("{case}.src")))?;
            let exp_path = dir.join(format!("{case}.expected_status"));
            let (expected_status, expected_phase) = parse_expected(&exp_path, &read(&exp_path)?)?;
            out.push(Fixture {
                language,
                case,
                code,
                expected_status,
                expected_phase,
            });
        }
    }
    Ok(out)
}

/// Result of running one fixture.
#[derive(Debug, Clone)]
pub struct FixtureCheck {
    pub name: String,
    pub outcome: Result<ExecutionOutcome, SandboxError>,
    /// Wall-clock time of the whole execution, as seen by the caller.
    pub elapsed_ms: u64,
}

impl FixtureCheck {
    /// Status (and phase, when the fixture names one) match.
    pub fn agrees(&self, fixture: &Fixture) -> bool {
        match &self.outcome {
            Ok(o) => o.status == fixture.expected_status && fixture.expected_phase.is_none_or(|p| p == o.phase),
            Err(_) => false,
        }
    }

    /// Time the phase that decided the outcome ran for, measured from the
    /// caller's side: total elapsed minus the earlier phases.
    pub fn deciding_phase_ms(&self) -> u64 {
        match &self.outcome {
            Ok(o) => self.elapsed_ms.saturating_sub(o.wall_ms.saturating_sub(o.final_phase_ms)),
            Err(_) => self.elapsed_ms,
        }
    }
}

/// Executes `fixture` with exemptions enabled and the given timeout.
pub fn check_fixture(sandbox: &Sandbox, fixture: &Fixture, timeout_ms: u64) -> FixtureCheck {
    let start = Instant::now();
    let outcome = sandbox.execute_with(&fixture.code, fixture.language, ExecOptions::new(timeout_ms));
    FixtureCheck {
        name: format!("{}/{}", fixture.language.as_str(), fixture.case),
        outcome,
        elapsed_ms: start.elapsed().as_millis() as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let py = dir.path().join("python");
        std::fs::create_dir(&py).unwrap();
        std::fs::write(py.join("b_ok.src"), "print(1)\n").unwrap();
        std::fs::write(py.join("b_ok.expected_status"), "pass run\n").unwrap();
        std::fs::write(py.join("a_loop.src"), "while True: pass\n").unwrap();
        std::fs::write(py.join("a_loop.expected_status"), "fail timeout").unwrap();
        let f = load_fixtures(dir.path()).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].case, "a_loop");
        assert!(f[0].is_timeout_case());
        assert_eq!(f[1].expected_status, ExecStatus::Pass);

        std::fs::write(py.join("c.src"), "").unwrap();
        std::fs::write(py.join("c.expected_status"), "passed").unwrap();
        assert!(matches!(load_fixtures(dir.path()), Err(FixtureError::Malformed { .. })));
    }
}
