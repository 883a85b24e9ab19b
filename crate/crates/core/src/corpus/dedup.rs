use std::collections::{HashMap, HashSet};

use super::jaccard::{jaccard_sets, ngram_set};
use super::Question;

pub const DEFAULT_NGRAM: usize = 5;
pub const DEFAULT_THRESHOLD: f64 = 0.7;

/// Inverted index from n-gram to the documents containing it.
///
/// Only documents sharing at least one gram with a probe can have positive
/// similarity, so lookups score just those.
#[derive(Debug, Clone)]
pub struct NgramIndex {
    n: usize,
    docs: Vec<HashSet<String>>,
    postings: HashMap<String, Vec<usize>>,
    empty_docs: usize,
}

impl NgramIndex {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "n-gram size must be positive");
        NgramIndex {
            n,
            docs: Vec::new(),
            postings: HashMap::new(),
            empty_docs: 0,
        }
    }

    pub fn from_texts<'a>(n: usize, texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut idx = Self::new(n);
        for t in texts {
            idx.insert(t);
        }
        idx
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn insert(&mut self, text: &str) {
        let grams = ngram_set(text, self.n);
        let id = self.docs.len();
        if grams.is_empty() {
            self.empty_docs += 1;
        }
        for g in &grams {
            self.postings.entry(g.clone()).or_default().push(id);
        }
        self.docs.push(grams);
    }

    /// Highest similarity between `text` and any indexed document.
    pub fn max_similarity(&self, text: &str) -> f64 {
        if self.docs.is_empty() {
            return 0.0;
        }
        let grams = ngram_set(text, self.n);
        if grams.is_empty() {
            // empty vs empty is 1.0, empty vs anything else 0.0
            return if self.empty_docs > 0 { 1.0 } else { 0.0 };
        }
        let mut candidates: Vec<usize> = grams
            .iter()
            .filter_map(|g| self.postings.get(g))
            .flatten()
            .copied()
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        candidates
            .into_iter()
            .map(|i| jaccard_sets(&grams, &self.docs[i]))
            .fold(0.0, f64::max)
    }

    /// True iff some indexed document has similarity ≥ `threshold` to `text`.
    pub fn is_near_duplicate(&self, text: &str, threshold: f64) -> bool {
        if self.docs.is_empty() {
            return false;
        }
        if threshold <= 0.0 {
            return true;
        }
        self.max_similarity(text) >= threshold
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DedupOutcome {
    pub kept: Vec<Question>,
    pub rejected: Vec<Question>,
}

/// Filters `candidates` against `existing` and against earlier kept
/// candidates. Kept order follows input order.
pub fn dedup_against<'a>(
    candidates: Vec<Question>,
    existing: impl IntoIterator<Item = &'a str>,
    threshold: f64,
    n: usize,
) -> DedupOutcome {
    let mut index = NgramIndex::from_texts(n, existing);
    let mut out = DedupOutcome::default();
    for q in candidates {
        if index.is_near_duplicate(&q.text, threshold) {
            out.rejected.push(q);
        } else {
            index.insert(&q.text);
            out.kept.push(q);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ngram_jaccard;
    use proptest::prelude::*;

    fn q(id: &str, text: &str) -> Question {
        Question::seed(id, text)
    }

    /// O(n²) pairwise reference.
    fn brute_force(cands: &[Question], existing: &[String], threshold: f64, n: usize) -> Vec<bool> {
        let mut pool: Vec<String> = existing.to_vec();
        let mut keep = Vec::new();
        for c in cands {
            let dup = pool.iter().any(|e| ngram_jaccard(&c.text, e, n) >= threshold);
            if !dup {
                pool.push(c.text.clone());
            }
            keep.push(!dup);
        }
        keep
    }

    #[test]
    fn identical_to_existing_is_rejected() {
        let existing = ["write a function to reverse a linked list in place"];
        let out = dedup_against(
            vec![q("c1", "Write a function to reverse a linked list in place")],
            existing,
            DEFAULT_THRESHOLD,
            DEFAULT_NGRAM,
        );
        assert!(out.kept.is_empty());
        assert_eq!(out.rejected.len(), 1);
    }

    #[test]
    fn unrelated_is_kept() {
        let out = dedup_against(
            vec![q("c1", "implement a trie supporting prefix search and deletion")],
            ["write a function to reverse a linked list in place"],
            DEFAULT_THRESHOLD,
            DEFAULT_NGRAM,
        );
        assert_eq!(out.kept.len(), 1);
    }

    #[test]
    fn batch_self_duplicates() {
        let text = "count the vowels in a given string and return the total";
        let out = dedup_against(
            vec![q("c1", text), q("c2", text)],
            std::iter::empty(),
            DEFAULT_THRESHOLD,
            DEFAULT_NGRAM,
        );
        assert_eq!(out.kept.iter().map(|q| q.id.as_str()).collect::<Vec<_>>(), ["c1"]);
        assert_eq!(out.rejected[0].id, "c2");
    }

    #[test]
    fn idempotent_on_kept() {
        let cands = vec![
            q("a", "merge two sorted arrays into one sorted array"),
            q("b", "find the longest palindromic substring of a string"),
        ];
        let first = dedup_against(cands, std::iter::empty(), 0.7, 5);
        let existing: Vec<String> = first.kept.iter().map(|q| q.text.clone()).collect();
        let again = dedup_against(first.kept.clone(), existing.iter().map(String::as_str), 0.7, 5);
        assert!(again.kept.is_empty());
        assert_eq!(again.rejected.len(), first.kept.len());
    }

    #[test]
    fn empty_texts() {
        let out = dedup_against(vec![q("a", ""), q("b", " ")], std::iter::empty(), 0.7, 5);
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.rejected.len(), 1);
    }

    proptest! {
        #[test]
        fn matches_pairwise_oracle(
            existing in proptest::collection::vec("[abcd ]{0,24}", 0..12),
            cands in proptest::collection::vec("[abcd ]{0,24}", 0..24),
            threshold in 0.0f64..1.0,
            n in 1usize..6,
        ) {
            let cands: Vec<Question> = cands.iter().enumerate()
                .map(|(i, t)| Question::seed(format!("c{i}"), t.clone())).collect();
            let expect = brute_force(&cands, &existing, threshold, n);
            let out = dedup_against(cands.clone(), existing.iter().map(String::as_str), threshold, n);
            let kept: HashSet<&str> = out.kept.iter().map(|q| q.id.as_str()).collect();
            let got: Vec<bool> = cands.iter().map(|c| kept.contains(c.id.as_str())).collect();
            prop_assert_eq!(got, expect);
            prop_assert_eq!(out.kept.len() + out.rejected.len(), cands.len());
        }
    }
}
