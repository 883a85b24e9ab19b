//! Request/response journal and a backend that replays it offline.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{now_ms, Backend, BackendError, Completion, DecodingParams, TokenLogprob};
use crate::corpus::store::{self, StoreError};
use crate::prompts::Prompt;

pub const JOURNAL_FILE: &str = "gateway.jsonl";

/// One journaled completion. A request with `n` samples produces `n`
/// consecutive entries with `sample` 0..n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub ts: u64,
    pub backend: String,
    pub prompt_sha256: String,
    pub params: DecodingParams,
    pub sample: u32,
    pub response_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<TokenLogprob>>,
}

/// Append-only journal; writes are serialized.
#[derive(Debug)]
pub struct Journal {
    file: Mutex<File>,
}

impl Journal {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Journal {
            file: Mutex::new(file),
        })
    }

    pub fn record(&self, backend: &str, prompt: &Prompt, params: &DecodingParams, completions: &[Completion]) {
        let ts = now_ms();
        let sha = prompt.sha256();
        let mut buf = Vec::new();
        for (i, c) in completions.iter().enumerate() {
            let entry = JournalEntry {
                ts,
                backend: backend.to_string(),
                prompt_sha256: sha.clone(),
                params: params.clone(),
                sample: i as u32,
                response_text: c.text.clone(),
                logprobs: c.token_logprobs.clone(),
            };
            if serde_json::to_writer(&mut buf, &entry).is_ok() {
                buf.push(b'\n');
            }
        }
        let mut f = self.file.lock().expect("journal lock poisoned");
        if let Err(e) = f.write_all(&buf) {
            log::error!("journal write failed: {e}");
        }
    }
}

type ReplayKey = (String, String);

/// Serves completions recorded in a journal, keyed by prompt hash and
/// decoding parameters. Repeated identical requests are served in recorded
/// order; once exhausted the last recording repeats.
#[derive(Debug)]
pub struct ReplayBackend {
    id: String,
    recordings: Mutex<HashMap<ReplayKey, VecDeque<Vec<JournalEntry>>>>,
}

impl ReplayBackend {
    /// Loads the entries recorded for `backend` from a journal file.
    pub fn from_journal(path: &Path, backend: &str) -> Result<Self, StoreError> {
        let entries: Vec<JournalEntry> = store::load_jsonl(path)?.records;
        Ok(Self::from_entries(backend, entries))
    }

    pub fn from_entries(backend: &str, entries: Vec<JournalEntry>) -> Self {
        let mut recordings: HashMap<ReplayKey, VecDeque<Vec<JournalEntry>>> = HashMap::new();
        for e in entries.into_iter().filter(|e| e.backend == backend) {
            let key = (e.prompt_sha256.clone(), params_key(&e.params));
            let groups = recordings.entry(key).or_default();
            let starts_new = e.sample == 0 || groups.back().is_none_or(|g| g.len() as u32 != e.sample);
            if starts_new {
                groups.push_back(vec![e]);
            } else if let Some(g) = groups.back_mut() {
                g.push(e);
            }
        }
        ReplayBackend {
            id: format!("replay:{backend}"),
            recordings: Mutex::new(recordings),
        }
    }
}

fn params_key(p: &DecodingParams) -> String {
    serde_json::to_string(p).unwrap_or_default()
}

impl Backend for ReplayBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &Prompt, params: &DecodingParams) -> Result<Vec<Completion>, BackendError> {
        let key = (prompt.sha256(), params_key(params));
        let mut rec = self.recordings.lock().expect("replay lock poisoned");
        let groups = rec.get_mut(&key).ok_or_else(|| {
            BackendError::Fatal(format!(
                "no journaled response for prompt {} (template drift?)",
                &key.0[..12]
            ))
        })?;
        let group = if groups.len() > 1 {
            groups.pop_front().expect("non-empty")
        } else {
            groups.front().cloned().expect("non-empty")
        };
        Ok(group
            .into_iter()
            .map(|e| Completion {
                text: e.response_text,
                token_logprobs: e.logprobs,
                backend_id: self.id.clone(),
                latency_ms: 0,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, MockBackend, RetryPolicy};
    use std::sync::Arc;

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(JOURNAL_FILE);
        let cands: Vec<String> = (0..5).map(|i| format!("answer {i}")).collect();
        let params = DecodingParams::nucleus(3).with_seed(9);
        let p1 = Prompt::new("s", "first");
        let p2 = Prompt::new("s", "second");

        let mut live = Gateway::new(RetryPolicy::immediate(1)).with_journal(Journal::open(&path).unwrap());
        live.register("teacher", Arc::new(MockBackend::sampler("t", cands)), 2);
        let a1 = live.complete("teacher", &p1, &params).unwrap();
        let a2 = live.complete("teacher", &p2, &DecodingParams::greedy()).unwrap();
        drop(live);

        let lines: Vec<JournalEntry> = store::load_jsonl(&path).unwrap().records;
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0].prompt_sha256, p1.sha256());

        let mut offline = Gateway::new(RetryPolicy::immediate(1));
        offline.register(
            "teacher",
            Arc::new(ReplayBackend::from_journal(&path, "teacher").unwrap()),
            1,
        );
        let texts = |v: Vec<Completion>| v.into_iter().map(|c| c.text).collect::<Vec<_>>();
        assert_eq!(texts(offline.complete("teacher", &p1, &params).unwrap()), texts(a1));
        assert_eq!(texts(offline.complete("teacher", &p2, &DecodingParams::greedy()).unwrap()), texts(a2));
        // drifted template: unknown prompt hash
        assert!(offline
            .complete("teacher", &Prompt::new("s", "changed"), &DecodingParams::greedy())
            .is_err());
    }
}
