//! Multi-view feedback: rubric scores fused with execution verdicts into
//! difficulty buckets.

mod examine;
mod score;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::sandbox::{ExecStatus, ExecutionOutcome, Phase};

pub use examine::{
    build_annotations, examine, ExamineContext, ExamineResult, Examined, Excluded, ScorerOutput,
    ScoringAnnotation, ANNOTATIONS_FILE, DEFAULT_ANNOTATION_SIZE, EXCLUDED_FILE, FEEDBACK_FILE, SCORER_OUTPUTS_FILE,
    STUDENT_SOLUTIONS_FILE,
};
pub use score::{parse_score, ParseSource, RubricScore, Unscorable, MAX_SCORE, MIN_SCORE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Easy,
    Medium,
    Hard,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Easy, Bucket::Medium, Bucket::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::Easy => "easy",
            Bucket::Medium => "medium",
            Bucket::Hard => "hard",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Bucket {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Bucket::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| format!("unknown bucket {s:?}"))
    }
}

/// Score at or above which a passing solution is easy.
pub const EASY_MIN_SCORE: u8 = 4;

/// Execution dominates: any failure is hard; a pass (exempted or not) is easy
/// with a score of at least 4 and medium otherwise.
pub fn classify(status: ExecStatus, score: u8) -> Bucket {
    if !status.is_pass() {
        Bucket::Hard
    } else if score >= EASY_MIN_SCORE {
        Bucket::Easy
    } else {
        Bucket::Medium
    }
}

pub fn classify_bucket(execution: &ExecutionOutcome, score: &RubricScore) -> Bucket {
    classify(execution.status, score.total)
}

/// Full feedback for one student solution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiViewFeedback {
    pub question_id: String,
    pub solution_id: String,
    pub execution: ExecutionOutcome,
    pub score: RubricScore,
    pub bucket: Bucket,
}

impl MultiViewFeedback {
    pub fn new(question_id: String, solution_id: String, execution: ExecutionOutcome, score: RubricScore) -> Self {
        let bucket = classify_bucket(&execution, &score);
        MultiViewFeedback {
            question_id,
            solution_id,
            execution,
            score,
            bucket,
        }
    }

    pub fn record(&self) -> FeedbackRecord {
        FeedbackRecord {
            question_id: self.question_id.clone(),
            solution_id: self.solution_id.clone(),
            exec_status: self.execution.status,
            exec_phase: self.execution.phase,
            score: self.score.total,
            parse_source: self.score.parse_source,
            bucket: self.bucket,
        }
    }
}

/// One line of `feedback.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRecord {
    pub question_id: String,
    pub solution_id: String,
    pub exec_status: ExecStatus,
    pub exec_phase: Phase,
    pub score: u8,
    pub parse_source: ParseSource,
    pub bucket: Bucket,
}

impl FeedbackRecord {
    /// Whether the stored bucket agrees with its components.
    pub fn is_consistent(&self) -> bool {
        (MIN_SCORE..=MAX_SCORE).contains(&self.score) && classify(self.exec_status, self.score) == self.bucket
    }
}

/// Count of records per bucket, in easy/medium/hard order.
pub fn bucket_histogram<'a>(records: impl IntoIterator<Item = &'a FeedbackRecord>) -> [usize; 3] {
    let mut h = [0; 3];
    for r in records {
        h[r.bucket.index()] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(status: ExecStatus, phase: Phase) -> ExecutionOutcome {
        ExecutionOutcome {
            status,
            phase,
            exit_code: if status == ExecStatus::Pass { Some(0) } else { Some(1) },
            stderr_excerpt: String::new(),
            wall_ms: 0,
            final_phase_ms: 0,
            exemption: (status == ExecStatus::EnvExemptPass).then(|| "rule".to_string()),
        }
    }

    #[test]
    fn truth_table() {
        let statuses = [
            (ExecStatus::Pass, Phase::Run, true),
            (ExecStatus::EnvExemptPass, Phase::Run, true),
            (ExecStatus::Fail, Phase::Compile, false),
            (ExecStatus::Fail, Phase::Run, false),
            (ExecStatus::Fail, Phase::Timeout, false),
        ];
        let mut cells = 0;
        for (status, phase, passes) in statuses {
            for total in 1..=6u8 {
                let expected = match (passes, total) {
                    (false, _) => Bucket::Hard,
                    (true, 4..=6) => Bucket::Easy,
                    (true, _) => Bucket::Medium,
                };
                let score = RubricScore {
                    total,
                    analysis_text: String::new(),
                    parse_source: ParseSource::TrailingLine,
                };
                assert_eq!(classify_bucket(&outcome(status, phase), &score), expected, "{status:?} {phase:?} {total}");
                cells += 1;
            }
        }
        assert_eq!(cells, 30);
    }

    #[test]
    fn record_round_trip() {
        let fb = MultiViewFeedback::new(
            "q1".into(),
            "q1:student".into(),
            outcome(ExecStatus::Pass, Phase::Run),
            parse_score("Score: 5").unwrap(),
        );
        assert_eq!(fb.bucket, Bucket::Easy);
        let line = serde_json::to_string(&fb.record()).unwrap();
        assert_eq!(
            line,
            r#"{"question_id":"q1","solution_id":"q1:student","exec_status":"pass","exec_phase":"run","score":5,"parse_source":"trailing-line","bucket":"easy"}"#
        );
        let back: FeedbackRecord = serde_json::from_str(&line).unwrap();
        assert!(back.is_consistent());
        let mut tampered = back;
        tampered.bucket = Bucket::Hard;
        assert!(!tampered.is_consistent());
    }
}
