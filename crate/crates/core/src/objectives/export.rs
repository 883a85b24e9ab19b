use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DEFAULT_BETA;
use crate::corpus::store::{self, StoreError};
use crate::corpus::{Corpus, DatasetSplit, Role};
use crate::prompts::FaultKind;

pub const CSL_FILE: &str = "csl_train.jsonl";
pub const FCL_FILE: &str = "fcl_train.jsonl";
pub const MANIFEST_FILE: &str = "train_manifest.json";

/// Hyperparameters handed to the external fine-tuning framework.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingManifest {
    pub epochs: u32,
    pub batch_size: u32,
    pub learning_rate_csl: f64,
    pub learning_rate_fcl: f64,
    pub lr_scheduler: String,
    pub precision: String,
    pub max_seq_length: u32,
    pub beta: f64,
    /// Whether each iteration fine-tunes from the base model or continues
    /// from the previous iteration's checkpoint.
    pub init_from: String,
}

impl Default for TrainingManifest {
    fn default() -> Self {
        TrainingManifest {
            epochs: 3,
            batch_size: 512,
            learning_rate_csl: 2e-5,
            learning_rate_fcl: 5e-7,
            lr_scheduler: "cosine".into(),
            precision: "fp16".into(),
            max_seq_length: 2048,
            beta: DEFAULT_BETA,
            init_from: "base".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CslRecord {
    pub instruction: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FclRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub error_type: FaultKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExport {
    pub csl_path: PathBuf,
    pub fcl_path: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest: TrainingManifest,
    pub csl_records: usize,
    pub fcl_records: usize,
    /// Split entries dropped for lack of a required solution.
    pub skipped: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("nothing to export: {skipped} split entries lacked solutions")]
    Empty { skipped: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Writes the CSL and FCL training files plus the manifest into `out_dir`.
pub fn export_training_sets(
    split: &DatasetSplit,
    corpus: &Corpus,
    manifest: &TrainingManifest,
    out_dir: &Path,
) -> Result<TrainingExport, ExportError> {
    let mut skipped = Vec::new();
    let mut csl = Vec::new();
    for id in &split.csl {
        match (corpus.question(id), corpus.solution(id, Role::TeacherCorrect)) {
            (Some(q), Some(s)) => csl.push(CslRecord {
                instruction: q.text.clone(),
                output: s.raw_text.clone(),
            }),
            _ => skipped.push(id.clone()),
        }
    }
    let mut fcl = Vec::new();
    for id in &split.fcl {
        let q = corpus.question(id);
        let c = corpus.solution(id, Role::TeacherCorrect);
        let f = corpus.solution(id, Role::TeacherFaulty);
        match (q, c, f) {
            (Some(q), Some(c), Some(f)) if f.error_type.is_some() && c.raw_text != f.raw_text => {
                fcl.push(FclRecord {
                    prompt: q.text.clone(),
                    chosen: c.raw_text.clone(),
                    rejected: f.raw_text.clone(),
                    error_type: f.error_type.expect("checked"),
                })
            }
            _ => skipped.push(id.clone()),
        }
    }
    if csl.is_empty() && fcl.is_empty() {
        return Err(ExportError::Empty {
            skipped: skipped.len(),
        });
    }
    if !skipped.is_empty() {
        log::warn!("export skipped {} split entries without solutions", skipped.len());
    }

    let csl_path = out_dir.join(CSL_FILE);
    let fcl_path = out_dir.join(FCL_FILE);
    let manifest_path = out_dir.join(MANIFEST_FILE);
    store::write_jsonl(&csl_path, &csl)?;
    store::write_jsonl(&fcl_path, &fcl)?;
    store::write_json(&manifest_path, manifest)?;
    Ok(TrainingExport {
        csl_path,
        fcl_path,
        manifest_path,
        manifest: manifest.clone(),
        csl_records: csl.len(),
        fcl_records: fcl.len(),
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split_corpus, Question, SolutionRecord, SplitItem};
    use crate::lang::Language;

    fn corpus(n: usize) -> Corpus {
        let mut c = Corpus::new(
            (0..n)
                .map(|i| Question::seed(format!("q{i}"), format!("task number {i}")))
                .collect(),
        )
        .unwrap();
        for i in 0..n {
            c.solutions.push(SolutionRecord::from_output(
                format!("q{i}"),
                Role::TeacherCorrect,
                format!("```python\nprint({i})\n```"),
                Language::Python,
                None,
            ));
            c.solutions.push(SolutionRecord::from_output(
                format!("q{i}"),
                Role::TeacherFaulty,
                format!("```python\nprint({i}\n```"),
                Language::Python,
                Some(FaultKind::Syntax),
            ));
        }
        c
    }

    fn split(n: usize) -> DatasetSplit {
        let items: Vec<SplitItem> = (0..n).map(|i| SplitItem::new(format!("q{i}"), true, true)).collect();
        split_corpus(&items, (8, 2), 11).unwrap().split
    }

    #[test]
    fn ten_question_export() {
        let dir = tempfile::tempdir().unwrap();
        let ex = export_training_sets(&split(10), &corpus(10), &TrainingManifest::default(), dir.path()).unwrap();
        assert_eq!((ex.csl_records, ex.fcl_records), (8, 2));
        let fcl: Vec<FclRecord> = store::load_jsonl(&ex.fcl_path).unwrap().records;
        assert!(fcl.iter().all(|r| r.chosen != r.rejected));
        let csl_line = std::fs::read_to_string(&ex.csl_path).unwrap();
        assert!(csl_line.starts_with("{\"instruction\":\"task number"));
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&ex.manifest_path).unwrap()).unwrap();
        assert_eq!(m["epochs"], 3);
        assert_eq!(m["batch_size"], 512);
        assert_eq!(m["learning_rate_csl"].as_f64(), Some(2e-5));
        assert_eq!(m["learning_rate_fcl"].as_f64(), Some(5e-7));
        assert_eq!(m["lr_scheduler"], "cosine");
        assert_eq!(m["precision"], "fp16");
        assert_eq!(m["max_seq_length"], 2048);
    }

    #[test]
    fn re_export_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (s, c) = (split(10), corpus(10));
        let m = TrainingManifest::default();
        let ea = export_training_sets(&s, &c, &m, a.path()).unwrap();
        let eb = export_training_sets(&s, &c, &m, b.path()).unwrap();
        for (x, y) in [(&ea.csl_path, &eb.csl_path), (&ea.fcl_path, &eb.fcl_path), (&ea.manifest_path, &eb.manifest_path)] {
            assert_eq!(store::sha256_file(x).unwrap(), store::sha256_file(y).unwrap());
        }
    }

    #[test]
    fn missing_solutions_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let s = split(10);
        let mut c = corpus(10);
        let gone = s.fcl[0].clone();
        c.solutions.retain(|x| !(x.question_id == gone && x.role == Role::TeacherFaulty));
        let ex = export_training_sets(&s, &c, &TrainingManifest::default(), dir.path()).unwrap();
        assert_eq!(ex.fcl_records, 1);
        assert_eq!(ex.skipped, vec![gone]);

        c.solutions.clear();
        assert!(matches!(
            export_training_sets(&s, &c, &TrainingManifest::default(), dir.path()),
            Err(ExportError::Empty { skipped: 10 })
        ));
    }
}
