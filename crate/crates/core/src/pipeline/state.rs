//! Run manifest, stage bookkeeping and the run-directory lock.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::store::{self, StoreError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = "lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Deliver,
    Feedback,
    Update,
    Done,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Deliver => "deliver",
            Stage::Feedback => "feedback",
            Stage::Update => "update",
            Stage::Done => "done",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationState {
    pub iteration: u32,
    pub stage: Stage,
}

/// A completed stage and the content hashes of the files it produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub iteration: u32,
    pub stage: Stage,
    pub completed_at: String,
    /// Paths relative to the run directory.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub run_name: String,
    /// Root of every named random substream in the run.
    pub seed: u64,
    pub iterations: u32,
    pub created_at: String,
    pub updated_at: String,
    pub state: IterationState,
    /// Whether fine-tuning restarts from the base model each iteration.
    pub training_init_from: String,
    /// Files written by `init`.
    pub init_files: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum IntegrityError {
    #[error("{path} changed since stage {stage} of iteration {iteration} completed (expected sha256 {expected}, found {found})")]
    HashMismatch {
        path: String,
        iteration: u32,
        stage: String,
        expected: String,
        found: String,
    },
    #[error("{path} recorded in the manifest is missing")]
    Missing { path: String },
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Hashes `rel_paths` (relative to `dir`) that exist.
pub fn hash_files(dir: &Path, rel_paths: &[String]) -> Result<BTreeMap<String, String>, StoreError> {
    let mut out = BTreeMap::new();
    for rel in rel_paths {
        let p = dir.join(rel);
        if p.exists() {
            out.insert(rel.clone(), store::sha256_file(&p)?);
        }
    }
    Ok(out)
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        store::read_json(&dir.join(MANIFEST_FILE))
    }

    pub fn save(&mut self, dir: &Path) -> Result<(), StoreError> {
        self.updated_at = now_rfc3339();
        store::write_json(&dir.join(MANIFEST_FILE), self)
    }

    pub fn is_complete(&self, iteration: u32, stage: Stage) -> bool {
        self.stages.iter().any(|s| s.iteration == iteration && s.stage == stage)
    }

    /// Re-hashes every file recorded by init and by completed stages.
    pub fn verify(&self, dir: &Path) -> Result<(), IntegrityError> {
        let init = self.init_files.iter().map(|(p, h)| (p, h, 0, "init"));
        let stages = self
            .stages
            .iter()
            .flat_map(|s| s.files.iter().map(move |(p, h)| (p, h, s.iteration, s.stage.as_str())));
        for (path, expected, iteration, stage) in init.chain(stages) {
            let full = dir.join(path);
            if !full.exists() {
                return Err(IntegrityError::Missing { path: path.clone() });
            }
            let found = store::sha256_file(&full).map_err(|_| IntegrityError::Missing { path: path.clone() })?;
            if &found != expected {
                return Err(IntegrityError::HashMismatch {
                    path: path.clone(),
                    iteration,
                    stage: stage.to_string(),
                    expected: expected.clone(),
                    found,
                });
            }
        }
        Ok(())
    }
}

/// Exclusive claim on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum LockError {
    #[error("run directory is locked by process {pid} ({path})")]
    Held { pid: u32, path: PathBuf },
    #[error("cannot create lock {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn pid_alive(pid: u32) -> bool {
    if pid == 0 || pid > i32::MAX as u32 {
        return false;
    }
    // SAFETY: signal 0 only checks for existence and permission.
    let r = unsafe { libc::kill(pid as i32, 0) };
    r == 0 || std::io::Error::last_os_error().raw_os_error() == Some(libc::EPERM)
}

impl RunLock {
    /// Takes the lock; a lock left by a dead process is reclaimed.
    pub fn acquire(dir: &Path) -> Result<Self, LockError> {
        let path = dir.join(LOCK_FILE);
        let io = |source| LockError::Io {
            path: path.clone(),
            source,
        };
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id()).map_err(io)?;
                    return Ok(RunLock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = std::fs::read_to_string(&path)
                        .ok()
                        .and_then(|s| s.trim().parse::<u32>().ok());
                    match holder {
                        Some(pid) if pid_alive(pid) => return Err(LockError::Held { pid, path }),
                        _ => {
                            log::warn!("removing stale lock {}", path.display());
                            let _ = std::fs::remove_file(&path);
                        }
                    }
                }
                Err(e) => return Err(io(e)),
            }
        }
        Err(io(std::io::Error::other("lock contention")))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_semantics() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(LockError::Held { .. })));
        drop(a);
        let _b = RunLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn stale_lock_is_reclaimed() {
        let dir = tempfile::tempdir().unwrap();
        // far above any pid the kernel hands out by default
        std::fs::write(dir.path().join(LOCK_FILE), "2147483000\n").unwrap();
        let _l = RunLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "one").unwrap();
        let files = hash_files(dir.path(), &["a.txt".into(), "absent".into()]).unwrap();
        assert_eq!(files.len(), 1);
        let m = Manifest {
            run_name: "r".into(),
            seed: 1,
            iterations: 1,
            created_at: now_rfc3339(),
            updated_at: now_rfc3339(),
            state: IterationState {
                iteration: 0,
                stage: Stage::Feedback,
            },
            training_init_from: "base".into(),
            init_files: BTreeMap::new(),
            stages: vec![StageRecord {
                iteration: 0,
                stage: Stage::Deliver,
                completed_at: now_rfc3339(),
                files,
            }],
        };
        m.verify(dir.path()).unwrap();
        std::fs::write(dir.path().join("a.txt"), "two").unwrap();
        assert!(matches!(m.verify(dir.path()), Err(IntegrityError::HashMismatch { .. })));
        std::fs::remove_file(dir.path().join("a.txt")).unwrap();
        assert!(matches!(m.verify(dir.path()), Err(IntegrityError::Missing { .. })));
    }
}
