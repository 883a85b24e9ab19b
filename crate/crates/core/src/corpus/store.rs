//! JSON-lines persistence with whole-file atomic replacement.
//!
//! Every mutation writes a sibling temp file and renames it over the target,
//! so concurrent readers observe either the old or the new file, never a torn
//! record. A malformed trailing line (left by a crashed writer that did not use
//! these helpers) is skipped with a warning; malformed lines elsewhere are
//! errors.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    /// Set when a malformed final line was ignored.
    pub warning: Option<String>,
}

pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_jsonl(path, &text)
}

/// Like [`load_jsonl`] but a missing file reads as empty.
pub fn load_jsonl_or_empty<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(load_jsonl(path)?.records)
}

fn parse_jsonl<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Loaded<T>, StoreError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let mut records = Vec::with_capacity(lines.len());
    let mut warning = None;
    for (pos, (idx, line)) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(r) => records.push(r),
            Err(e) if pos + 1 == lines.len() => {
                let msg = format!(
                    "{}:{}: ignoring malformed trailing record ({e})",
                    path.display(),
                    idx + 1
                );
                log::warn!("{msg}");
                warning = Some(msg);
            }
            Err(e) => {
                return Err(StoreError::Malformed {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(Loaded { records, warning })
}

fn encode_lines<T: Serialize>(records: &[T]) -> Result<Vec<u8>, StoreError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

/// Replaces `path` with `bytes` via write-temp-then-rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StoreError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), StoreError> {
    write_atomic(path, &encode_lines(records)?)
}

/// Appends `records`, rewriting the file atomically. A malformed trailing
/// line in the existing file is dropped.
pub fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), StoreError> {
    let mut bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(io_err(path)(e)),
    };
    if let Some(pos) = last_line_start(&bytes) {
        let tail = &bytes[pos..];
        let trimmed = std::str::from_utf8(tail).unwrap_or("").trim();
        if !trimmed.is_empty() && serde_json::from_str::<serde_json::Value>(trimmed).is_err() {
            log::warn!("{}: dropping malformed trailing record before append", path.display());
            bytes.truncate(pos);
        }
    }
    if !bytes.is_empty() && !bytes.ends_with(b"\n") {
        bytes.push(b'\n');
    }
    bytes.extend(encode_lines(records)?);
    write_atomic(path, &bytes)
}

fn last_line_start(bytes: &[u8]) -> Option<usize> {
    if bytes.is_empty() {
        return None;
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    Some(body.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn sha256_file(path: &Path) -> Result<String, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
