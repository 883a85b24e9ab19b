//! Seed-knowledge store: questions, teacher/student solutions, near-duplicate
//! filtering and the CSL/FCL dataset partition.

mod dedup;
mod jaccard;
mod split;
pub mod store;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::lang::Language;
use crate::prompts::FaultKind;

pub use dedup::{dedup_against, DedupOutcome, NgramIndex, DEFAULT_NGRAM, DEFAULT_THRESHOLD};
pub use jaccard::{ngram_jaccard, ngram_set, tokenize};
pub use split::{split_corpus, DatasetSplit, SplitError, SplitItem, SplitOutcome, SPLIT_FILE};
pub use store::StoreError;

pub const QUESTIONS_FILE: &str = "questions.jsonl";
pub const SOLUTIONS_FILE: &str = "solutions.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    SeedImport,
    GeneratedEasy,
    GeneratedMedium,
    GeneratedHard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub origin: Origin,
    pub iteration: u32,
    pub parent_id: Option<String>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum QuestionError {
    #[error("question `{0}` has empty text")]
    EmptyText(String),
    #[error("question `{0}`: seed imports must not have a parent and generated questions must")]
    ParentMismatch(String),
    #[error("duplicate question id `{0}`")]
    DuplicateId(String),
}

impl Question {
    pub fn seed(id: impl Into<String>, text: impl Into<String>) -> Self {
        Question {
            id: id.into(),
            text: text.into(),
            origin: Origin::SeedImport,
            iteration: 0,
            parent_id: None,
        }
    }

    pub fn validate(&self) -> Result<(), QuestionError> {
        if self.text.trim().is_empty() {
            return Err(QuestionError::EmptyText(self.id.clone()));
        }
        if (self.origin == Origin::SeedImport) != self.parent_id.is_none() {
            return Err(QuestionError::ParentMismatch(self.id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    TeacherCorrect,
    TeacherFaulty,
    Student,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::TeacherCorrect => "teacher-correct",
            Role::TeacherFaulty => "teacher-faulty",
            Role::Student => "student",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub question_id: String,
    pub role: Role,
    pub raw_text: String,
    pub code: String,
    pub language: Language,
    pub error_type: Option<FaultKind>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SolutionError {
    #[error("solution {0}: error_type must be present exactly for teacher-faulty solutions")]
    ErrorTypeMismatch(String),
    #[error("solution {0}: code is not a substring of raw_text")]
    CodeNotInRaw(String),
}

impl SolutionRecord {
    /// Builds a record, extracting the code snippet from the raw model output.
    pub fn from_output(
        question_id: impl Into<String>,
        role: Role,
        raw_text: impl Into<String>,
        language: Language,
        error_type: Option<FaultKind>,
    ) -> Self {
        let raw_text = raw_text.into();
        let code = crate::sandbox::extract_code(&raw_text, language).to_string();
        SolutionRecord {
            question_id: question_id.into(),
            role,
            raw_text,
            code,
            language,
            error_type,
        }
    }

    /// Stable identifier: one solution per (question, role).
    pub fn id(&self) -> String {
        solution_id(&self.question_id, self.role)
    }

    pub fn validate(&self) -> Result<(), SolutionError> {
        if self.error_type.is_some() != (self.role == Role::TeacherFaulty) {
            return Err(SolutionError::ErrorTypeMismatch(self.id()));
        }
        if !self.raw_text.contains(&self.code) {
            return Err(SolutionError::CodeNotInRaw(self.id()));
        }
        Ok(())
    }
}

pub fn solution_id(question_id: &str, role: Role) -> String {
    format!("{question_id}:{role}")
}

/// In-memory view of one iteration's questions and teacher solutions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub questions: Vec<Question>,
    pub solutions: Vec<SolutionRecord>,
}

impl Corpus {
    pub fn new(questions: Vec<Question>) -> Result<Self, QuestionError> {
        let mut seen = HashSet::new();
        for q in &questions {
            q.validate()?;
            if !seen.insert(q.id.as_str()) {
                return Err(QuestionError::DuplicateId(q.id.clone()));
            }
        }
        Ok(Corpus {
            questions,
            solutions: Vec::new(),
        })
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn solution(&self, question_id: &str, role: Role) -> Option<&SolutionRecord> {
        self.solutions
            .iter()
            .find(|s| s.question_id == question_id && s.role == role)
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.questions.iter().map(|q| q.text.as_str())
    }

    pub fn store(&self, dir: &Path) -> Result<(), StoreError> {
        store::write_jsonl(&dir.join(QUESTIONS_FILE), &self.questions)?;
        store::write_jsonl(&dir.join(SOLUTIONS_FILE), &self.solutions)
    }

    /// Loads a corpus; a missing solutions file is treated as empty.
    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let questions = store::load_jsonl(&dir.join(QUESTIONS_FILE))?.records;
        let sol_path = dir.join(SOLUTIONS_FILE);
        let solutions = if sol_path.exists() {
            store::load_jsonl(&sol_path)?.records
        } else {
            Vec::new()
        };
        Ok(Corpus {
            questions,
            solutions,
        })
    }
}
