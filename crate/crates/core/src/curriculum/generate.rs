//! New-question generation from bucketed parents.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Allocation;
use crate::corpus::{dedup_against, Origin, Question};
use crate::feedback::Bucket;
use crate::gateway::{DecodingParams, Gateway};
use crate::prompts::PromptSet;
use crate::rng;
use crate::sandbox::fenced_blocks;

pub const NEW_QUESTIONS_FILE: &str = "new_questions.jsonl";
pub const REPORT_FILE: &str = "curriculum_report.json";
/// Replies shorter than this, after trimming, are malformed.
pub const MIN_QUESTION_CHARS: usize = 10;
/// Extra rounds for slots whose first reply was rejected.
pub const REGENERATION_ROUNDS: u32 = 2;

/// Question text from a teacher reply: the first fenced block when present,
/// else the whole reply, trimmed.
pub fn parse_question_reply(reply: &str) -> Option<String> {
    let text = match fenced_blocks(reply).first() {
        Some(b) => b.body.trim(),
        None => reply.trim(),
    };
    (text.chars().count() >= MIN_QUESTION_CHARS).then(|| text.to_string())
}

pub struct GenerationContext<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptSet,
    pub teacher: &'a str,
    /// Decoding for teacher calls; the seed is replaced per slot.
    pub params: DecodingParams,
    pub seed: u64,
    /// Iteration whose feedback drives this generation; used in ids.
    pub iteration: u32,
    pub dedup_threshold: f64,
    pub ngram: usize,
    pub parallelism: usize,
}

/// Parents available per bucket, in easy/medium/hard order.
#[derive(Debug, Clone, Default)]
pub struct BucketedParents<'a> {
    pub buckets: [Vec<&'a Question>; 3],
}

impl<'a> BucketedParents<'a> {
    /// Groups questions by bucket; each bucket is sorted by id so draws do
    /// not depend on input order.
    pub fn new(items: impl IntoIterator<Item = (&'a Question, Bucket)>) -> Self {
        let mut buckets: [Vec<&'a Question>; 3] = Default::default();
        for (q, b) in items {
            buckets[b.index()].push(q);
        }
        for b in &mut buckets {
            b.sort_by(|x, y| x.id.cmp(&y.id));
            b.dedup_by(|x, y| x.id == y.id);
        }
        BucketedParents { buckets }
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.buckets[0].len(), self.buckets[1].len(), self.buckets[2].len()]
    }

    pub fn get(&self, b: Bucket) -> &[&'a Question] {
        &self.buckets[b.index()]
    }
}

/// One generation slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub bucket: Bucket,
    pub index: usize,
}

impl Slot {
    pub fn id(&self, iteration: u32) -> String {
        format!("it{iteration}-{}-{:04}", self.bucket, self.index)
    }
}

/// Slots in bucket order for `allocation`.
pub fn slots(allocation: &Allocation) -> Vec<Slot> {
    Bucket::ALL
        .into_iter()
        .flat_map(|bucket| (0..allocation.get(bucket)).map(move |index| Slot { bucket, index }))
        .collect()
}

/// Seeded uniform parent draw for a slot in a given round.
pub fn draw_parent<'p, 'a>(
    parents: &'p BucketedParents<'a>,
    slot: &Slot,
    seed: u64,
    iteration: u32,
    round: u32,
) -> Option<&'p Question> {
    let pool = parents.get(slot.bucket);
    if pool.is_empty() {
        return None;
    }
    let scope = [iteration.to_string(), slot.bucket.to_string(), slot.index.to_string(), round.to_string()];
    let scope: Vec<&str> = scope.iter().map(String::as_str).collect();
    let mut r = rng::substream(seed, rng::PARENT_SAMPLING, &scope);
    Some(pool[r.gen_range(0..pool.len())])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotFailure {
    pub slot: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumReport {
    pub allocated: Allocation,
    pub generated: usize,
    pub dedup_rejected: usize,
    pub shortfall: usize,
    pub malformed: usize,
    pub rounds: u32,
    pub failures: Vec<SlotFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    pub questions: Vec<Question>,
    pub report: CurriculumReport,
}

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("no new question could be generated ({} slot failures)", report.failures.len())]
    NothingGenerated { report: Box<CurriculumReport> },
}

enum Attempt {
    Ok(Question),
    Malformed,
    Failed(String),
}

fn origin_for(b: Bucket) -> Origin {
    match b {
        Bucket::Easy => Origin::GeneratedEasy,
        Bucket::Medium => Origin::GeneratedMedium,
        Bucket::Hard => Origin::GeneratedHard,
    }
}

impl<'a> GenerationContext<'a> {
    fn attempt(&self, parents: &BucketedParents<'_>, slot: &Slot, round: u32) -> Attempt {
        let Some(parent) = draw_parent(parents, slot, self.seed, self.iteration, round) else {
            return Attempt::Failed(format!("no {} parents", slot.bucket));
        };
        let prompt = match self.prompts.render_update(parent, slot.bucket) {
            Ok(p) => p,
            Err(e) => return Attempt::Failed(e.to_string()),
        };
        let scope = [
            "update".to_string(),
            self.iteration.to_string(),
            slot.bucket.to_string(),
            slot.index.to_string(),
            round.to_string(),
        ];
        let scope: Vec<&str> = scope.iter().map(String::as_str).collect();
        let params = self
            .params
            .clone()
            .with_seed(rng::subseed(self.seed, rng::NUCLEUS, &scope));
        let reply = match self.gateway.complete(self.teacher, &prompt, &params) {
            Ok(r) => r,
            Err(e) => return Attempt::Failed(e.to_string()),
        };
        let text = reply.into_iter().next().map(|c| c.text).unwrap_or_default();
        match parse_question_reply(&text) {
            Some(text) => Attempt::Ok(Question {
                id: slot.id(self.iteration),
                text,
                origin: origin_for(slot.bucket),
                iteration: parent.iteration + 1,
                parent_id: Some(parent.id.clone()),
            }),
            None => Attempt::Malformed,
        }
    }

    fn run_round(&self, parents: &BucketedParents<'_>, pending: &[Slot], round: u32) -> Vec<Attempt> {
        let slots_out: Vec<Mutex<Option<Attempt>>> = pending.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..self.parallelism.max(1).min(pending.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(slot) = pending.get(i) else { break };
                    let a = self.attempt(parents, slot, round);
                    *slots_out[i].lock().expect("slot") = Some(a);
                });
            }
        });
        slots_out
            .into_iter()
            .map(|m| m.into_inner().expect("slot").expect("attempted"))
            .collect()
    }

    /// Generates one question per allocated slot, filtering near-duplicates
    /// of `existing` and of each other. Rejected or malformed slots are
    /// retried for up to two more rounds with fresh draws.
    pub fn generate(
        &self,
        allocation: &Allocation,
        parents: &BucketedParents<'_>,
        existing: &[&str],
    ) -> Result<GenerationOutcome, GenerationError> {
        let mut pending = slots(allocation);
        let mut accepted: Vec<Question> = Vec::new();
        let mut failures = Vec::new();
        let mut dedup_rejected = 0;
        let mut malformed = 0;
        let mut rounds = 0;
        for round in 0..=REGENERATION_ROUNDS {
            if pending.is_empty() {
                break;
            }
            rounds = round + 1;
            let attempts = self.run_round(parents, &pending, round);
            let mut candidates = Vec::new();
            let mut retry = Vec::new();
            for (slot, a) in pending.iter().zip(attempts) {
                match a {
                    Attempt::Ok(q) => candidates.push((slot.clone(), q)),
                    Attempt::Malformed => {
                        malformed += 1;
                        retry.push(slot.clone());
                    }
                    Attempt::Failed(reason) => failures.push(SlotFailure {
                        slot: slot.id(self.iteration),
                        reason,
                    }),
                }
            }
            let pool: Vec<&str> = existing
                .iter()
                .copied()
                .chain(accepted.iter().map(|q| q.text.as_str()))
                .collect();
            let outcome = dedup_against(
                candidates.iter().map(|(_, q)| q.clone()).collect(),
                pool,
                self.dedup_threshold,
                self.ngram,
            );
            dedup_rejected += outcome.rejected.len();
            for r in &outcome.rejected {
                if let Some((slot, _)) = candidates.iter().find(|(_, q)| q.id == r.id) {
                    retry.push(slot.clone());
                }
            }
            accepted.extend(outcome.kept);
            retry.sort_by_key(|a| (a.bucket, a.index));
            pending = retry;
        }
        accepted.sort_by(|a, b| a.id.cmp(&b.id));
        let report = CurriculumReport {
            allocated: *allocation,
            generated: accepted.len(),
            dedup_rejected,
            shortfall: allocation.total() - accepted.len(),
            malformed,
            rounds,
            failures,
        };
        if accepted.is_empty() {
            return Err(GenerationError::NothingGenerated {
                report: Box::new(report),
            });
        }
        Ok(GenerationOutcome {
            questions: accepted,
            report,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, RetryPolicy};
    use std::sync::Arc;

    fn ctx<'a>(gw: &'a Gateway, prompts: &'a PromptSet) -> GenerationContext<'a> {
        GenerationContext {
            gateway: gw,
            prompts,
            teacher: "teacher",
            params: DecodingParams::nucleus(1),
            seed: 42,
            iteration: 0,
            dedup_threshold: 0.7,
            ngram: 5,
            parallelism: 3,
        }
    }

    fn gw(backend: MockBackend) -> Gateway {
        let mut g = Gateway::new(RetryPolicy::immediate(1));
        g.register("teacher", Arc::new(backend), 4);
        g
    }

    /// Distinct text derived from the nucleus seed of each call.
    fn distinct_teacher() -> MockBackend {
        MockBackend::new("teacher", |call| {
            Ok(format!(
                "Write a function that solves variant number {} of the puzzle with extra constraints.",
                call.sample_seed
            ))
        })
    }

    fn seeds() -> Vec<Question> {
        (0..6).map(|i| Question::seed(format!("s{i}"), format!("seed problem {i} about arrays and strings"))).collect()
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(parse_question_reply("  Reverse a linked list in place.  ").unwrap(), "Reverse a linked list in place.");
        assert_eq!(
            parse_question_reply("New question:\n```\nSort the matrix rows by sum.\n```").unwrap(),
            "Sort the matrix rows by sum."
        );
        assert_eq!(parse_question_reply("short"), None);
        assert_eq!(parse_question_reply("```\nshort\n```\nbut a long tail here"), None);
    }

    #[test]
    fn single_hard_slot() {
        let qs = seeds();
        let parents = BucketedParents::new(qs.iter().map(|q| (q, Bucket::Hard)));
        let g = gw(MockBackend::fixed("teacher", "Compute the longest palindromic subsequence of a string."));
        let p = PromptSet::defaults();
        let out = ctx(&g, &p)
            .generate(&Allocation::from_array([0, 0, 1]), &parents, &[])
            .unwrap();
        assert_eq!(out.questions.len(), 1);
        let q = &out.questions[0];
        assert_eq!(q.origin, Origin::GeneratedHard);
        assert_eq!(q.id, "it0-hard-0000");
        assert_eq!(q.iteration, 1);
        assert!(qs.iter().any(|s| Some(&s.id) == q.parent_id.as_ref()));
        assert!(q.validate().is_ok());
    }

    #[test]
    fn duplicate_reply_is_regenerated_then_reported() {
        let qs = seeds();
        let parents = BucketedParents::new(qs.iter().map(|q| (q, Bucket::Medium)));
        let existing = "write a function that sums the digits of a positive integer";
        let backend = MockBackend::fixed("teacher", existing);
        let g = gw(backend);
        let p = PromptSet::defaults();
        let err = ctx(&g, &p)
            .generate(&Allocation::from_array([0, 1, 0]), &parents, &[existing])
            .unwrap_err();
        let GenerationError::NothingGenerated { report } = err;
        assert_eq!(report.dedup_rejected, 3);
        assert_eq!(report.rounds, 3);
        assert_eq!(report.shortfall, 1);
        assert_eq!(g.stats("teacher").unwrap().requests(), 3);
    }

    #[test]
    fn histogram_and_determinism() {
        let qs = seeds();
        let parents = BucketedParents::new(
            qs.iter()
                .enumerate()
                .map(|(i, q)| (q, Bucket::ALL[i % 3])),
        );
        let p = PromptSet::defaults();
        let alloc = Allocation::from_array([2, 2, 4]);
        let g1 = gw(distinct_teacher());
        let a = ctx(&g1, &p).generate(&alloc, &parents, &[]).unwrap();
        let mut hist = [0; 3];
        for q in &a.questions {
            let b = match q.origin {
                Origin::GeneratedEasy => 0,
                Origin::GeneratedMedium => 1,
                Origin::GeneratedHard => 2,
                Origin::SeedImport => unreachable!(),
            };
            hist[b] += 1;
            let parent = q.parent_id.as_deref().unwrap();
            assert!(parents.buckets[b].iter().any(|x| x.id == parent));
        }
        assert_eq!(hist, [2, 2, 4]);
        let g2 = gw(distinct_teacher());
        let b = ctx(&g2, &p).generate(&alloc, &parents, &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parent_draw_frequencies() {
        let qs: Vec<Question> = (0..9).map(|i| Question::seed(format!("p{i}"), "x")).collect();
        let parents = BucketedParents::new(qs.iter().map(|q| (q, Bucket::Hard)));
        let mut counts = [0usize; 9];
        for index in 0..9000 {
            let q = draw_parent(&parents, &Slot { bucket: Bucket::Hard, index }, 1, 0, 0).unwrap();
            counts[q.id[1..].parse::<usize>().unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 9000.0 - 1.0 / 9.0).abs() < 0.02, "{counts:?}");
        }
    }
}
