//! Benchmark execution: sampling, post-processing and test runs.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::store::{self, StoreError};
use crate::corpus::{Question, Role, SolutionRecord};
use crate::feedback::parse_score;
use crate::gateway::{DecodingParams, Gateway};
use crate::lang::Language;
use crate::prompts::{Prompt, PromptSet};
use crate::rng;
use crate::sandbox::{fenced_blocks, ExecOptions, Sandbox};

/// One benchmark problem, HumanEval style: a signature with docstring to
/// complete and a test program calling the entry point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkProblem {
    pub id: String,
    pub language: Language,
    pub prompt: String,
    pub tests: String,
    pub entry_point: String,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchmarkError {
    #[error("problem {id}: tests do not reference entry point `{entry_point}`")]
    TestsMissEntryPoint { id: String, entry_point: String },
    #[error("duplicate problem id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl BenchmarkProblem {
    pub fn validate(&self) -> Result<(), BenchmarkError> {
        if self.entry_point.is_empty() || !self.tests.contains(&self.entry_point) {
            return Err(BenchmarkError::TestsMissEntryPoint {
                id: self.id.clone(),
                entry_point: self.entry_point.clone(),
            });
        }
        Ok(())
    }
}

/// Loads and validates a `<suite>.<language>.jsonl` problem file.
pub fn load_problems(path: &Path) -> Result<Vec<BenchmarkProblem>, BenchmarkError> {
    let problems: Vec<BenchmarkProblem> = store::load_jsonl(path)?.records;
    let mut seen = std::collections::HashSet::new();
    for p in &problems {
        p.validate()?;
        if !seen.insert(p.id.as_str()) {
            return Err(BenchmarkError::DuplicateId(p.id.clone()));
        }
    }
    Ok(problems)
}

/// Cuts a completion down to the solution function.
///
/// Fenced output is unwrapped first and a leading echo of the prompt is
/// dropped. The completion is then truncated at the first non-empty
/// flush-left line after the body begins; for brace languages a flush-left
/// line starting with `}` closes the function and is kept.
pub fn postprocess(completion: &str, prompt: &str, language: Language) -> String {
    let mut code = match fenced_blocks(completion).first() {
        Some(_) => crate::sandbox::extract_code(completion, language),
        None => completion,
    };
    let trimmed_prompt = prompt.trim_end();
    if !trimmed_prompt.is_empty() {
        if let Some(rest) = code.strip_prefix(trimmed_prompt) {
            code = rest.strip_prefix('\n').unwrap_or(rest);
        }
    }
    let mut out = String::new();
    let mut body_started = false;
    for line in code.split_inclusive('\n') {
        let content = line.trim_end_matches(['\n', '\r']);
        let blank = content.trim().is_empty();
        let flush_left = !blank && !content.starts_with([' ', '\t']);
        if body_started && flush_left {
            if language.uses_braces() && content.starts_with('}') {
                out.push_str(line);
            }
            break;
        }
        if !blank {
            body_started = true;
        }
        out.push_str(line);
    }
    out
}

/// Runnable test program for one completion.
pub fn build_program(problem: &BenchmarkProblem, completion: &str) -> String {
    let body = postprocess(completion, &problem.prompt, problem.language);
    let mut program = String::with_capacity(problem.prompt.len() + body.len() + problem.tests.len() + 2);
    program.push_str(&problem.prompt);
    program.push_str(&body);
    if !program.ends_with('\n') {
        program.push('\n');
    }
    program.push('\n');
    program.push_str(&problem.tests);
    program
}

/// Outcome of sampling one problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemVerdicts {
    pub id: String,
    pub solved: Vec<bool>,
    /// First completion, for rubric scoring.
    #[serde(skip)]
    pub first_completion: Option<String>,
    /// Why the problem has no verdicts, if skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ProblemVerdicts {
    pub fn is_skipped(&self) -> bool {
        self.solved.is_empty()
    }
}

pub struct BenchContext<'a> {
    pub gateway: &'a Gateway,
    pub sandbox: &'a Sandbox,
    pub backend: &'a str,
    pub timeout_ms: u64,
    pub parallelism: usize,
    pub seed: u64,
}

/// Chat prompt used to request a completion of a benchmark problem.
pub fn completion_prompt(problem: &BenchmarkProblem) -> Prompt {
    Prompt::new(
        format!(
            "Complete the following {} code. Reply with the code only.",
            problem.language.display_name()
        ),
        problem.prompt.clone(),
    )
}

impl<'a> BenchContext<'a> {
    fn one(&self, p: &BenchmarkProblem, params: &DecodingParams) -> ProblemVerdicts {
        let skip = |note: String| ProblemVerdicts {
            id: p.id.clone(),
            solved: Vec::new(),
            first_completion: None,
            note: Some(note),
        };
        if let Err(e) = self.sandbox.require(p.language) {
            return skip(e.to_string());
        }
        let params = params
            .clone()
            .with_seed(rng::subseed(self.seed, rng::NUCLEUS, &["eval", &p.id]));
        let completions = match self.gateway.complete(self.backend, &completion_prompt(p), &params) {
            Ok(c) => c,
            Err(e) => return skip(format!("generation failed: {e}")),
        };
        let opts = ExecOptions::new(self.timeout_ms).without_exemptions();
        let solved = completions
            .iter()
            .map(|c| {
                let program = build_program(p, &c.text);
                self.sandbox
                    .execute_with(&program, p.language, opts)
                    .map(|o| o.status == crate::sandbox::ExecStatus::Pass)
                    .unwrap_or(false)
            })
            .collect();
        ProblemVerdicts {
            id: p.id.clone(),
            solved,
            first_completion: completions.into_iter().next().map(|c| c.text),
            note: None,
        }
    }

    /// Samples and tests every problem; results keep input order.
    pub fn run_benchmark(&self, problems: &[BenchmarkProblem], params: &DecodingParams) -> Vec<ProblemVerdicts> {
        let slots: Vec<Mutex<Option<ProblemVerdicts>>> = problems.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..self.parallelism.max(1).min(problems.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(p) = problems.get(i) else { break };
                    let v = self.one(p, params);
                    *slots[i].lock().expect("slot") = Some(v);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot").expect("every problem run"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanScore {
    pub mean: f64,
    pub scored: usize,
    pub excluded: Vec<String>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("no first solution could be scored ({0} excluded)")]
pub struct NothingScored(pub usize);

/// Mean rubric total of the first solution of each problem.
pub fn mean_rubric_score(
    gateway: &Gateway,
    scorer: &str,
    prompts: &PromptSet,
    problems: &[BenchmarkProblem],
    first_solutions: &[Option<String>],
) -> Result<MeanScore, NothingScored> {
    let mut total = 0u64;
    let mut scored = 0usize;
    let mut excluded = Vec::new();
    for (p, sol) in problems.iter().zip(first_solutions) {
        let Some(sol) = sol else {
            excluded.push(p.id.clone());
            continue;
        };
        let q = Question::seed(p.id.clone(), p.prompt.clone());
        let s = SolutionRecord::from_output(p.id.clone(), Role::Student, sol.clone(), p.language, None);
        let score = prompts
            .render_scoring(&q, &s)
            .ok()
            .and_then(|prompt| gateway.complete(scorer, &prompt, &DecodingParams::greedy()).ok())
            .and_then(|c| c.into_iter().next())
            .and_then(|c| parse_score(&c.text).ok());
        match score {
            Some(s) => {
                total += s.total as u64;
                scored += 1;
            }
            None => excluded.push(p.id.clone()),
        }
    }
    if scored == 0 {
        return Err(NothingScored(excluded.len()));
    }
    Ok(MeanScore {
        mean: total as f64 / scored as f64,
        scored,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncates_after_function() {
        let c = "    return a + b\n\n\ndef extra():\n    pass\n";
        assert_eq!(postprocess(c, "def add(a, b):\n", Language::Python), "    return a + b\n\n\n");
        let c = "    return a + b;\n}\n\nint main() { return 0; }\n";
        assert_eq!(postprocess(c, "int add(int a, int b) {\n", Language::C), "    return a + b;\n}\n");
        let fenced = "```python\ndef add(a, b):\n    return a + b\nprint(add(1, 2))\n```";
        assert_eq!(
            postprocess(fenced, "def add(a, b):\n", Language::Python),
            "    return a + b\n"
        );
    }

    #[test]
    fn program_layout() {
        let p = BenchmarkProblem {
            id: "p".into(),
            language: Language::Python,
            prompt: "def inc(x):\n".into(),
            tests: "assert inc(1) == 2\n".into(),
            entry_point: "inc".into(),
        };
        assert!(p.validate().is_ok());
        assert_eq!(build_program(&p, "    return x + 1"), "def inc(x):\n    return x + 1\n\nassert inc(1) == 2\n");
        let bad = BenchmarkProblem {
            tests: "assert True".into(),
            ..p
        };
        assert!(bad.validate().is_err());
    }
}
