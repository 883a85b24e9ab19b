use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng;

pub const SPLIT_FILE: &str = "split.json";

/// Partition of question ids into the supervised (CSL) and contrastive (FCL)
/// training sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSplit {
    pub csl: Vec<String>,
    pub fcl: Vec<String>,
    pub ratio: (u32, u32),
    pub seed: u64,
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.csl.len() + self.fcl.len()
    }

    /// Number of CSL items the ratio asks for out of `total`, rounded to the
    /// nearest integer (halves round up).
    pub fn target_csl(total: usize, ratio: (u32, u32)) -> usize {
        let (a, b) = (ratio.0 as u128, ratio.1 as u128);
        let n = total as u128;
        ((2 * n * a + (a + b)) / (2 * (a + b))) as usize
    }

    /// |csl| is within one item of the configured proportion.
    pub fn within_ratio(&self) -> bool {
        let target = Self::target_csl(self.total(), self.ratio) as i64;
        (self.csl.len() as i64 - target).abs() <= 1
    }

    pub fn is_disjoint(&self) -> bool {
        let csl: HashSet<&str> = self.csl.iter().map(String::as_str).collect();
        self.fcl.iter().all(|id| !csl.contains(id.as_str()))
    }
}

/// What is known about one question's solutions when splitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitItem {
    pub question_id: String,
    pub has_correct: bool,
    /// A faulty solution exists (or may still be generated).
    pub fcl_eligible: bool,
}

impl SplitItem {
    pub fn new(question_id: impl Into<String>, has_correct: bool, fcl_eligible: bool) -> Self {
        SplitItem {
            question_id: question_id.into(),
            has_correct,
            fcl_eligible,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitOutcome {
    pub split: DatasetSplit,
    /// Questions without a teacher-correct solution.
    pub unsplittable: Vec<String>,
    /// FCL slots that could not be filled because too few questions had a
    /// faulty solution.
    pub fcl_shortfall: usize,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SplitError {
    #[error("split ratio must be two positive integers, got {0}:{1}")]
    BadRatio(u32, u32),
}

/// Random-uniform partition of `items` at `ratio` (CSL:FCL).
///
/// Items are shuffled with `seed`; the first eligible items in shuffled order
/// fill the FCL side, everything else with a correct solution goes to CSL.
/// Input order does not affect the assignment.
pub fn split_corpus(
    items: &[SplitItem],
    ratio: (u32, u32),
    seed: u64,
) -> Result<SplitOutcome, SplitError> {
    if ratio.0 == 0 || ratio.1 == 0 {
        return Err(SplitError::BadRatio(ratio.0, ratio.1));
    }
    let unsplittable: Vec<String> = items
        .iter()
        .filter(|i| !i.has_correct)
        .map(|i| i.question_id.clone())
        .collect();
    let mut order: Vec<&SplitItem> = items.iter().filter(|i| i.has_correct).collect();
    order.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    order.shuffle(&mut rng::substream(seed, rng::SPLIT, &[]));

    let n = order.len();
    let fcl_target = n - DatasetSplit::target_csl(n, ratio);
    let mut fcl_ids = HashSet::new();
    for item in &order {
        if fcl_ids.len() == fcl_target {
            break;
        }
        if item.fcl_eligible {
            fcl_ids.insert(item.question_id.as_str());
        }
    }
    let fcl_shortfall = fcl_target - fcl_ids.len();

    let mut split = DatasetSplit {
        csl: Vec::new(),
        fcl: Vec::new(),
        ratio,
        seed,
    };
    for item in items.iter().filter(|i| i.has_correct) {
        if fcl_ids.contains(item.question_id.as_str()) {
            split.fcl.push(item.question_id.clone());
        } else {
            split.csl.push(item.question_id.clone());
        }
    }
    Ok(SplitOutcome {
        split,
        unsplittable,
        fcl_shortfall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn items(n: usize) -> Vec<SplitItem> {
        (0..n).map(|i| SplitItem::new(format!("q{i:03}"), true, true)).collect()
    }

    #[test]
    fn ten_at_eight_two() {
        let out = split_corpus(&items(10), (8, 2), 1).unwrap();
        assert_eq!((out.split.csl.len(), out.split.fcl.len()), (8, 2));
        assert!(out.split.is_disjoint());
    }

    #[test]
    fn five_at_eight_two() {
        let out = split_corpus(&items(5), (8, 2), 3).unwrap();
        assert_eq!((out.split.csl.len(), out.split.fcl.len()), (4, 1));
    }

    #[test]
    fn empty() {
        let out = split_corpus(&[], (8, 2), 3).unwrap();
        assert_eq!(out.split.total(), 0);
        assert_eq!(out.fcl_shortfall, 0);
    }

    #[test]
    fn bad_ratio() {
        assert_eq!(split_corpus(&items(3), (8, 0), 0), Err(SplitError::BadRatio(8, 0)));
    }

    #[test]
    fn ineligible_items_are_reassigned() {
        let mut its = items(10);
        let first = split_corpus(&its, (8, 2), 9).unwrap();
        // knock out one planned FCL question; another takes its place
        let dropped = first.split.fcl[0].clone();
        its.iter_mut()
            .find(|i| i.question_id == dropped)
            .unwrap()
            .fcl_eligible = false;
        let second = split_corpus(&its, (8, 2), 9).unwrap();
        assert_eq!(second.split.fcl.len(), 2);
        assert!(!second.split.fcl.contains(&dropped));
        assert!(second.split.fcl.contains(&first.split.fcl[1]));
        assert_eq!(second.fcl_shortfall, 0);
    }

    #[test]
    fn missing_correct_is_unsplittable() {
        let mut its = items(4);
        its[2].has_correct = false;
        let out = split_corpus(&its, (8, 2), 0).unwrap();
        assert_eq!(out.unsplittable, vec!["q002".to_string()]);
        assert_eq!(out.split.total(), 3);
    }

    #[test]
    fn shortfall_reported() {
        let its: Vec<SplitItem> = (0..10)
            .map(|i| SplitItem::new(format!("q{i}"), true, i == 0))
            .collect();
        let out = split_corpus(&its, (8, 2), 0).unwrap();
        assert_eq!(out.split.fcl, vec!["q0".to_string()]);
        assert_eq!(out.fcl_shortfall, 1);
    }

    #[test]
    fn manifest_shape() {
        let out = split_corpus(&items(2), (8, 2), 5).unwrap();
        let v: serde_json::Value = serde_json::to_value(&out.split).unwrap();
        assert_eq!(v["ratio"], serde_json::json!([8, 2]));
        assert_eq!(v["seed"], 5);
    }

    proptest! {
        #[test]
        fn ratio_and_determinism(n in 0usize..200, a in 1u32..10, b in 1u32..10, seed: u64) {
            let its = items(n);
            let x = split_corpus(&its, (a, b), seed).unwrap();
            let mut rev = its.clone();
            rev.reverse();
            let y = split_corpus(&rev, (a, b), seed).unwrap();
            prop_assert!(x.split.within_ratio());
            prop_assert!(x.split.is_disjoint());
            prop_assert_eq!(x.split.total(), n);
            let mut fx = x.split.fcl.clone();
            let mut fy = y.split.fcl.clone();
            fx.sort();
            fy.sort();
            prop_assert_eq!(fx, fy);
            prop_assert_eq!(x.split, split_corpus(&its, (a, b), seed).unwrap().split);
        }
    }
}
