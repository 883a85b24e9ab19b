//! Offline teacher, student and scorer personas.
//!
//! Replies are pure functions of the prompt (and of the sample seed under
//! nucleus decoding), so runs against these backends are reproducible. All
//! generated code is Python.

use sha2::{Digest, Sha256};

use super::config::Persona;
use crate::gateway::{BackendError, MockBackend, MockCall};
use crate::prompts::{Family, FaultKind};

fn hash64(text: &str) -> u64 {
    let d = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn fenced(code: &str) -> String {
    format!("```python\n{code}```\n")
}

fn correct_code(h: u64) -> String {
    let k = h % 1000;
    format!("def solve(n):\n    return n * {k} + 1\n\nassert solve(2) == {}\nprint(solve(3))\n", 2 * k + 1)
}

/// The fault kind whose definition is repeated as the injection target.
fn target_fault(user: &str) -> Option<FaultKind> {
    FaultKind::ALL
        .into_iter()
        .find(|k| user.matches(&k.definition()).count() >= 2)
}

fn faulty_code(h: u64, kind: FaultKind) -> String {
    let k = h % 1000;
    match kind {
        FaultKind::Syntax => format!("def solve(n:\n    return n * {k} + 1\n\nprint(solve(3))\n"),
        FaultKind::Logical => format!("def solve(n):\n    return n * {k} - 1\n\nassert solve(2) == {}\n", 2 * k + 1),
        FaultKind::Type => format!("def solve(n):\n    return \"total: \" + n * {k}\n\nprint(solve(3))\n"),
        FaultKind::Name => format!("def solve(n):\n    return n * {k} + offset\n\nprint(solve(3))\n"),
        FaultKind::Timeout => format!("def solve(n):\n    while n > 0:\n        n += {k}\n    return n\n\nprint(solve(3))\n"),
    }
}

const VERBS: [&str; 12] = [
    "count", "merge", "rotate", "filter", "group", "reverse", "compress", "validate", "sort", "index", "flatten",
    "partition",
];
const OBJECTS: [&str; 16] = [
    "intervals", "strings", "matrix rows", "graph edges", "prime factors", "log lines", "tree nodes", "dates",
    "coordinates", "words", "bank transactions", "binary digits", "stock prices", "file paths", "queue events",
    "polynomial terms",
];
const CONSTRAINTS: [&str; 16] = [
    "in linear time",
    "without extra memory",
    "ignoring case",
    "keeping the original order",
    "when the input may be empty",
    "with duplicates removed",
    "for negative values too",
    "using a single pass",
    "returning the count as well",
    "modulo one billion and seven",
    "with ties broken by index",
    "when values repeat",
    "under a size limit of k",
    "that appear at least twice",
    "grouped by their first letter",
    "after skipping every third item",
];

fn new_question(seed: u64, harder: bool) -> String {
    let mut s = seed;
    let mut pick = |n: usize| {
        // splitmix64 step
        s = s.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = s;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        ((z ^ (z >> 31)) % n as u64) as usize
    };
    let verb = VERBS[pick(VERBS.len())];
    let obj = OBJECTS[pick(OBJECTS.len())];
    let c1 = CONSTRAINTS[pick(CONSTRAINTS.len())];
    let c2 = CONSTRAINTS[pick(CONSTRAINTS.len())];
    let other = OBJECTS[pick(OBJECTS.len())];
    let tag = pick(10_000);
    let extra = if harder {
        format!(" Then extend it to also handle {other} {c2}.")
    } else {
        format!(" Also report how many {other} were seen.")
    };
    format!("Write a Python function `task_{tag}` to {verb} the given {obj} {c1}.{extra}")
}

fn teacher(call: &MockCall<'_>) -> Result<String, BackendError> {
    let user = &call.prompt.user;
    let h = hash64(user);
    match call.prompt.family {
        Some(Family::Correct) | None => Ok(fenced(&correct_code(h))),
        Some(Family::Faulty) => {
            let kind = target_fault(user).ok_or_else(|| BackendError::Malformed("no target fault in prompt".into()))?;
            Ok(fenced(&faulty_code(h, kind)))
        }
        Some(Family::UpdateHarder) => Ok(new_question(call.sample_seed ^ h, true)),
        Some(Family::UpdateSimilar) => Ok(new_question(call.sample_seed ^ h, false)),
        Some(Family::Scoring) => Ok("Score: 3".into()),
    }
}

/// Solves two thirds of the questions; the rest raise at run time.
fn student(call: &MockCall<'_>) -> Result<String, BackendError> {
    let h = hash64(&call.prompt.user);
    if h.is_multiple_of(3) {
        Ok(fenced("def solve(n):\n    raise ValueError(\"unsupported input\")\n\nprint(solve(3))\n"))
    } else {
        Ok(fenced(&correct_code(h)))
    }
}

fn scorer(call: &MockCall<'_>) -> Result<String, BackendError> {
    let total = 1 + hash64(&call.prompt.user) % 6;
    Ok(format!("The solution was checked against each criterion.\nScore: {total}\n"))
}

/// A deterministic backend playing `persona`.
pub fn persona_backend(name: &str, persona: Persona) -> MockBackend {
    match persona {
        Persona::Teacher => MockBackend::new(name, teacher),
        Persona::Student => MockBackend::new(name, student),
        Persona::Scorer => MockBackend::new(name, scorer),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{dedup_against, Question};
    use crate::prompts::PromptSet;

    #[test]
    fn teacher_follows_the_requested_fault() {
        let prompts = PromptSet::defaults();
        let q = Question::seed("q", "Return the sum of a list of integers.");
        for kind in FaultKind::ALL {
            let p = prompts.render_faulty(&q, kind, crate::lang::Language::Python).unwrap();
            assert_eq!(target_fault(&p.user), Some(kind));
        }
    }

    #[test]
    fn generated_questions_rarely_collide() {
        let qs: Vec<Question> = (0..200u64)
            .map(|i| Question::seed(format!("g{i}"), new_question(hash64(&i.to_string()), i % 2 == 0)))
            .collect();
        let out = dedup_against(qs, std::iter::empty(), 0.7, 5);
        assert!(out.kept.len() >= 190, "kept {}", out.kept.len());
    }
}
