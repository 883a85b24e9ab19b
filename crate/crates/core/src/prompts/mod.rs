//! Prompt templates for the teacher, student and scorer, and the fault
//! taxonomy used for faulty-solution generation.

mod fault;
mod template;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Question, SolutionRecord};
use crate::feedback::Bucket;
use crate::lang::Language;

pub use fault::{rubric_listing, taxonomy_listing, FaultKind, RubricCriterion, RUBRIC};
pub use template::{PromptTemplate, TemplateError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Correct,
    Faulty,
    Scoring,
    UpdateSimilar,
    UpdateHarder,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Correct,
        Family::Faulty,
        Family::Scoring,
        Family::UpdateSimilar,
        Family::UpdateHarder,
    ];

    /// Template file stem under the prompts directory.
    pub fn file_stem(self) -> &'static str {
        match self {
            Family::Correct => "correct",
            Family::Faulty => "faulty",
            Family::Scoring => "scoring",
            Family::UpdateSimilar => "update_similar",
            Family::UpdateHarder => "update_harder",
        }
    }

    /// Placeholders the user part must contain, no more and no fewer.
    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            Family::Correct => &["question", "language"],
            Family::Faulty => &["question", "language", "fault_taxonomy", "fault"],
            Family::Scoring => &["question", "solution", "rubric"],
            Family::UpdateSimilar | Family::UpdateHarder => &["old_question"],
        }
    }

    fn default_source(self) -> &'static str {
        match self {
            Family::Correct => include_str!("../../prompts/correct.txt"),
            Family::Faulty => include_str!("../../prompts/faulty.txt"),
            Family::Scoring => include_str!("../../prompts/scoring.txt"),
            Family::UpdateSimilar => include_str!("../../prompts/update_similar.txt"),
            Family::UpdateHarder => include_str!("../../prompts/update_harder.txt"),
        }
    }
}

/// A rendered prompt: system part plus user part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub family: Option<Family>,
    pub system: String,
    pub user: String,
}

impl Prompt {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        Prompt {
            family: None,
            system: system.into(),
            user: user.into(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.system.trim().is_empty() && self.user.trim().is_empty()
    }

    pub fn char_len(&self) -> usize {
        self.system.chars().count() + self.user.chars().count()
    }

    /// Content hash over both parts; the family tag is metadata and excluded.
    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system.as_bytes());
        h.update([0u8]);
        h.update(self.user.as_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("question `{0}` has empty text")]
    EmptyQuestion(String),
    #[error("solution for `{solution}` does not belong to question `{question}`")]
    ForeignSolution { question: String, solution: String },
}

/// The five validated templates.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: Vec<PromptTemplate>,
}

impl PromptSet {
    /// The templates shipped with the crate.
    pub fn defaults() -> Self {
        let templates = Family::ALL
            .iter()
            .map(|&f| PromptTemplate::parse(f, f.default_source()).expect("shipped template is valid"))
            .collect();
        PromptSet { templates }
    }

    /// Loads `<dir>/<family>.txt` for every family, validating each.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut templates = Vec::new();
        for f in Family::ALL {
            let path = dir.join(format!("{}.txt", f.file_stem()));
            let src = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                path: path.clone(),
                message: e.to_string(),
            })?;
            templates.push(PromptTemplate::parse(f, &src)?);
        }
        Ok(PromptSet { templates })
    }

    /// Writes the shipped defaults into `dir` for operators to edit.
    pub fn write_defaults(dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for f in Family::ALL {
            std::fs::write(dir.join(format!("{}.txt", f.file_stem())), f.default_source())?;
        }
        Ok(())
    }

    pub fn template(&self, family: Family) -> &PromptTemplate {
        self.templates
            .iter()
            .find(|t| t.family == family)
            .expect("all families loaded")
    }

    fn check_question(q: &Question) -> Result<(), RenderError> {
        if q.text.trim().is_empty() {
            return Err(RenderError::EmptyQuestion(q.id.clone()));
        }
        Ok(())
    }

    pub fn render_correct(&self, q: &Question, language: Language) -> Result<Prompt, RenderError> {
        Self::check_question(q)?;
        Ok(self.template(Family::Correct).render(&[
            ("question", q.text.as_str()),
            ("language", language.display_name()),
        ]))
    }

    pub fn render_faulty(
        &self,
        q: &Question,
        fault: FaultKind,
        language: Language,
    ) -> Result<Prompt, RenderError> {
        Self::check_question(q)?;
        let taxonomy = taxonomy_listing();
        let target = fault.definition();
        Ok(self.template(Family::Faulty).render(&[
            ("question", q.text.as_str()),
            ("language", language.display_name()),
            ("fault_taxonomy", taxonomy.as_str()),
            ("fault", target.as_str()),
        ]))
    }

    pub fn render_scoring(&self, q: &Question, s: &SolutionRecord) -> Result<Prompt, RenderError> {
        Self::check_question(q)?;
        if s.question_id != q.id {
            return Err(RenderError::ForeignSolution {
                question: q.id.clone(),
                solution: s.id(),
            });
        }
        let rubric = rubric_listing();
        Ok(self.template(Family::Scoring).render(&[
            ("question", q.text.as_str()),
            ("solution", s.raw_text.as_str()),
            ("rubric", rubric.as_str()),
        ]))
    }

    /// Easy questions evolve into harder ones; medium and hard ones into
    /// questions of similar topic and difficulty.
    pub fn render_update(&self, q: &Question, bucket: Bucket) -> Result<Prompt, RenderError> {
        Self::check_question(q)?;
        let family = match bucket {
            Bucket::Easy => Family::UpdateHarder,
            Bucket::Medium | Bucket::Hard => Family::UpdateSimilar,
        };
        Ok(self
            .template(family)
            .render(&[("old_question", q.text.as_str())]))
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::defaults()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Role;

    fn q(text: &str) -> Question {
        Question::seed("q1", text)
    }

    #[test]
    fn correct_embeds_question_once() {
        let p = PromptSet::defaults()
            .render_correct(&q("reverse a string"), Language::Python)
            .unwrap();
        assert_eq!(p.user.matches("reverse a string").count(), 1);
        assert!(p.user.contains("Python"));
        assert!(p.user.to_lowercase().contains("syntactically correct"));
        assert_eq!(p.family, Some(Family::Correct));
    }

    #[test]
    fn no_resubstitution() {
        let p = PromptSet::defaults()
            .render_correct(&q("print {question} and {language}"), Language::Go)
            .unwrap();
        assert!(p.user.contains("print {question} and {language}"));
    }

    #[test]
    fn empty_question_rejected() {
        assert_eq!(
            PromptSet::defaults().render_correct(&q("  "), Language::Python),
            Err(RenderError::EmptyQuestion("q1".into()))
        );
    }

    #[test]
    fn faulty_names_target_and_taxonomy() {
        let set = PromptSet::defaults();
        let p = set
            .render_faulty(&q("sum a list"), FaultKind::Syntax, Language::Python)
            .unwrap();
        assert!(p.user.contains("Syntax Error"));
        assert!(p.user.contains("Violations of programming language grammar"));
        for k in FaultKind::ALL {
            assert!(p.user.contains(&k.definition()));
        }
        assert_eq!(p.user.matches("sum a list").count(), 1);

        let t = set
            .render_faulty(&q("sum a list"), FaultKind::Timeout, Language::Python)
            .unwrap();
        let target = t.user.split("Error to inject").nth(1).unwrap();
        assert!(target.contains("infinite loops"));
        assert_eq!(
            t,
            set.render_faulty(&q("sum a list"), FaultKind::Timeout, Language::Python)
                .unwrap()
        );
    }

    #[test]
    fn scoring_lists_rubric_in_order() {
        let s = SolutionRecord::from_output(
            "q1",
            Role::Student,
            "```python\nprint(`x`)\n```",
            Language::Python,
            None,
        );
        let p = PromptSet::defaults().render_scoring(&q("echo"), &s).unwrap();
        let mut last = 0;
        for c in RUBRIC {
            let header = format!("{} ({} Point", c.name, c.points);
            let pos = p.user.find(&header).unwrap_or_else(|| panic!("missing {header}"));
            assert!(pos > last);
            last = pos;
        }
        assert!(p.user.contains("```python\nprint(`x`)\n```"));
        assert!(p.user.contains("Score: <k>"));
        assert!(p.user.contains("1 to 6"));
    }

    #[test]
    fn scoring_rejects_foreign_solution() {
        let s = SolutionRecord::from_output("other", Role::Student, "x", Language::Python, None);
        assert!(matches!(
            PromptSet::defaults().render_scoring(&q("echo"), &s),
            Err(RenderError::ForeignSolution { .. })
        ));
    }

    #[test]
    fn update_instruction_by_bucket() {
        let set = PromptSet::defaults();
        let easy = set.render_update(&q("sort a list"), Bucket::Easy).unwrap();
        assert!(easy.user.contains("more challenging than the old question"));
        let hard = set.render_update(&q("sort a list"), Bucket::Hard).unwrap();
        assert!(hard.user.contains("similar topic and a similar difficulty"));
        assert!(!hard.user.contains("more challenging"));
        let medium = set.render_update(&q("parse json"), Bucket::Medium).unwrap();
        assert_eq!(
            medium.user.replace("parse json", "sort a list"),
            hard.user
        );
        assert_eq!(medium.system, hard.system);
        assert_eq!(easy.user.matches("sort a list").count(), 1);
    }

    #[test]
    fn load_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        PromptSet::write_defaults(dir.path()).unwrap();
        let set = PromptSet::load_dir(dir.path()).unwrap();
        let a = set.render_correct(&q("x y"), Language::C).unwrap();
        let b = PromptSet::defaults().render_correct(&q("x y"), Language::C).unwrap();
        assert_eq!(a, b);

        std::fs::write(dir.path().join("correct.txt"), "[system]\nhi\n[user]\n{question} {bogus}\n").unwrap();
        assert!(matches!(
            PromptSet::load_dir(dir.path()),
            Err(TemplateError::UnknownPlaceholder { .. })
        ));
    }

    #[test]
    fn sha_ignores_family() {
        let mut a = Prompt::new("s", "u");
        let b = a.clone();
        a.family = Some(Family::Scoring);
        assert_eq!(a.sha256(), b.sha256());
        assert_ne!(Prompt::new("s", "u").sha256(), Prompt::new("su", "").sha256());
    }
}
