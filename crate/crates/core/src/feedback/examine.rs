//! Student examination: greedy solution, execution, rubric scoring.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{parse_score, MultiViewFeedback, RubricScore};
use crate::corpus::{Question, Role, SolutionRecord};
use crate::gateway::{DecodingParams, Gateway};
use crate::lang::Language;
use crate::prompts::PromptSet;
use crate::rng;
use crate::sandbox::Sandbox;

pub const FEEDBACK_FILE: &str = "feedback.jsonl";
pub const STUDENT_SOLUTIONS_FILE: &str = "student_solutions.jsonl";
pub const SCORER_OUTPUTS_FILE: &str = "scorer_outputs.jsonl";
pub const EXCLUDED_FILE: &str = "examine_excluded.jsonl";
pub const ANNOTATIONS_FILE: &str = "scoring_annotations.jsonl";
pub const DEFAULT_ANNOTATION_SIZE: usize = 15_000;

/// Raw scorer reply kept for auditing and annotation export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerOutput {
    pub question_id: String,
    pub solution_id: String,
    pub raw_output: String,
    /// Whether the first reply was unscorable and the scorer was asked again.
    pub requeried: bool,
}

/// A question left out of the feedback file, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excluded {
    pub question_id: String,
    pub step: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Examined {
    pub feedback: MultiViewFeedback,
    pub solution: SolutionRecord,
    pub scorer: ScorerOutput,
}

pub type ExamineResult = Result<Examined, Excluded>;

pub struct ExamineContext<'a> {
    pub gateway: &'a Gateway,
    pub sandbox: &'a Sandbox,
    pub prompts: &'a PromptSet,
    pub student: &'a str,
    pub scorer: &'a str,
    pub language: Language,
    pub student_params: DecodingParams,
    pub scorer_params: DecodingParams,
    pub parallelism: usize,
}

impl<'a> ExamineContext<'a> {
    fn one(&self, q: &Question) -> ExamineResult {
        let excluded = |step: &str, reason: String| Excluded {
            question_id: q.id.clone(),
            step: step.into(),
            reason,
        };
        let prompt = self
            .prompts
            .render_correct(q, self.language)
            .map_err(|e| excluded("student", e.to_string()))?;
        let reply = self
            .gateway
            .complete(self.student, &prompt, &self.student_params)
            .map_err(|e| excluded("student", e.to_string()))?;
        let text = reply.into_iter().next().map(|c| c.text).unwrap_or_default();
        let solution = SolutionRecord::from_output(q.id.clone(), Role::Student, text, self.language, None);
        let execution = self
            .sandbox
            .execute(&solution.code, self.language)
            .map_err(|e| excluded("sandbox", e.to_string()))?;

        let scoring = self
            .prompts
            .render_scoring(q, &solution)
            .map_err(|e| excluded("scorer", e.to_string()))?;
        let mut requeried = false;
        let attempt = || -> Result<(String, Option<RubricScore>), Excluded> {
            let out = self
                .gateway
                .complete(self.scorer, &scoring, &self.scorer_params)
                .map_err(|e| excluded("scorer", e.to_string()))?;
            let raw = out.into_iter().next().map(|c| c.text).unwrap_or_default();
            let parsed = parse_score(&raw).ok();
            Ok((raw, parsed))
        };
        let (mut raw, mut parsed) = attempt()?;
        if parsed.is_none() {
            log::info!("question {}: unscorable scorer output, asking again", q.id);
            requeried = true;
            (raw, parsed) = attempt()?;
        }
        let score = parsed.ok_or_else(|| {
            excluded(
                "scorer",
                format!("unscorable after re-query: {:?}", raw.chars().take(120).collect::<String>()),
            )
        })?;
        let solution_id = solution.id();
        Ok(Examined {
            feedback: MultiViewFeedback::new(q.id.clone(), solution_id.clone(), execution, score),
            scorer: ScorerOutput {
                question_id: q.id.clone(),
                solution_id,
                raw_output: raw,
                requeried,
            },
            solution,
        })
    }
}

/// Examines every question; results keep input order and one question's
/// failure never affects another.
pub fn examine(ctx: &ExamineContext<'_>, questions: &[Question]) -> Vec<ExamineResult> {
    let slots: Vec<Mutex<Option<ExamineResult>>> = questions.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..ctx.parallelism.max(1).min(questions.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(q) = questions.get(i) else { break };
                let r = ctx.one(q);
                *slots[i].lock().expect("slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot").expect("every question examined"))
        .collect()
}

/// Seed-dataset record for training a dedicated scorer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringAnnotation {
    pub question: String,
    pub solution: String,
    pub score: u8,
    pub analysis: String,
}

/// Uniformly samples at most `size` annotations, keeping their relative order.
pub fn build_annotations(items: Vec<ScoringAnnotation>, size: usize, seed: u64) -> Vec<ScoringAnnotation> {
    if items.len() <= size {
        return items;
    }
    let mut r = rng::substream(seed, rng::ANNOTATION_SAMPLE, &[]);
    let mut picked = sample(&mut r, items.len(), size).into_vec();
    picked.sort_unstable();
    let mut it = picked.into_iter().peekable();
    items
        .into_iter()
        .enumerate()
        .filter_map(|(i, a)| {
            if it.peek() == Some(&i) {
                it.next();
                Some(a)
            } else {
                None
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::{bucket_histogram, Bucket, ParseSource};
    use crate::gateway::{BackendError, MockBackend, RetryPolicy};
    use crate::sandbox::SandboxConfig;
    use std::sync::Arc;

    fn python_sandbox() -> Sandbox {
        Sandbox::new(SandboxConfig {
            disabled: Language::ALL.into_iter().filter(|l| *l != Language::Python).collect(),
            ..SandboxConfig::default()
        })
        .unwrap()
    }

    /// Student answers are keyed by a marker in the question text:
    /// `[ok]` passes, `[bad]` fails to run. The scorer reads the score
    /// marker `[sN]` out of the question echoed in its prompt.
    fn gateway(scorer_noise: bool) -> Gateway {
        let mut gw = Gateway::new(RetryPolicy::immediate(1));
        let student = MockBackend::new("student", |call| {
            let code = if call.prompt.user.contains("[ok]") { "print('fine')" } else { "raise ValueError('x')" };
            Ok(format!("Here you go:\n```python\n{code}\n```\n"))
        });
        let scorer = MockBackend::new("scorer", move |call| {
            let u = &call.prompt.user;
            if scorer_noise && u.contains("[noise]") {
                return Ok("I cannot decide.".into());
            }
            let k = (1..=6).find(|k| u.contains(&format!("[s{k}]"))).unwrap_or(1);
            Ok(format!("Analysis of the solution.\nScore: {k}"))
        });
        gw.register("student", Arc::new(student), 4);
        gw.register("scorer", Arc::new(scorer), 4);
        gw
    }

    fn run(gw: &Gateway, sb: &Sandbox, qs: &[Question]) -> Vec<ExamineResult> {
        let prompts = PromptSet::defaults();
        let ctx = ExamineContext {
            gateway: gw,
            sandbox: sb,
            prompts: &prompts,
            student: "student",
            scorer: "scorer",
            language: Language::Python,
            student_params: DecodingParams::greedy(),
            scorer_params: DecodingParams::greedy(),
            parallelism: 4,
        };
        examine(&ctx, qs)
    }

    #[test]
    fn scripted_histogram() {
        // (pass?, score) for 20 questions; expected buckets computed by hand
        let script: Vec<(bool, u8)> = (0..20).map(|i| (i % 3 != 0, (i % 6 + 1) as u8)).collect();
        let mut expected = [0usize; 3];
        let qs: Vec<Question> = script
            .iter()
            .enumerate()
            .map(|(i, (ok, s))| {
                let b = if !ok { 2 } else if *s >= 4 { 0 } else { 1 };
                expected[b] += 1;
                Question::seed(format!("q{i:02}"), format!("task {i} {} [s{s}]", if *ok { "[ok]" } else { "[bad]" }))
            })
            .collect();
        assert_eq!(expected, [6, 7, 7]);
        let out = run(&gateway(false), &python_sandbox(), &qs);
        let records: Vec<_> = out.iter().map(|r| r.as_ref().unwrap().feedback.record()).collect();
        assert_eq!(bucket_histogram(&records), expected);
        assert!(records.iter().all(|r| r.is_consistent()));
        assert_eq!(records[1].bucket, Bucket::Medium);
        assert_eq!(records.iter().map(|r| r.question_id.as_str()).collect::<Vec<_>>()[..3], ["q00", "q01", "q02"]);
    }

    #[test]
    fn unscorable_and_transport_are_excluded() {
        let qs = vec![
            Question::seed("a", "alpha [ok] [s5]"),
            Question::seed("b", "beta [ok] [noise]"),
        ];
        let gw = gateway(true);
        let out = run(&gw, &python_sandbox(), &qs);
        let a = out[0].as_ref().unwrap();
        assert_eq!(a.feedback.bucket, Bucket::Easy);
        assert_eq!(a.feedback.score.parse_source, ParseSource::TrailingLine);
        let b = out[1].as_ref().unwrap_err();
        assert_eq!(b.step, "scorer");
        assert!(b.reason.contains("unscorable"));
        // one original request plus one re-query for the noisy question
        assert_eq!(gw.stats("scorer").unwrap().requests(), 3);

        let mut gw = Gateway::new(RetryPolicy::immediate(1));
        gw.register(
            "student",
            Arc::new(MockBackend::fixed("student", "x").with_failures(vec![BackendError::Transient("down".into())])),
            1,
        );
        gw.register("scorer", Arc::new(MockBackend::fixed("scorer", "Score: 2")), 1);
        let out = run(&gw, &python_sandbox(), &[Question::seed("c", "gamma")]);
        assert_eq!(out[0].as_ref().unwrap_err().step, "student");
    }

    #[test]
    fn annotation_sampling() {
        let items: Vec<ScoringAnnotation> = (0..50)
            .map(|i| ScoringAnnotation {
                question: format!("q{i}"),
                solution: "s".into(),
                score: 3,
                analysis: "a".into(),
            })
            .collect();
        let a = build_annotations(items.clone(), 10, 5);
        assert_eq!(a.len(), 10);
        assert_eq!(a, build_annotations(items.clone(), 10, 5));
        assert_eq!(build_annotations(items.clone(), 100, 5).len(), 50);
        let idx: Vec<usize> = a.iter().map(|x| x.question[1..].parse().unwrap()).collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }
}
