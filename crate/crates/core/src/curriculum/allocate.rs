use serde::{Deserialize, Serialize};

use crate::feedback::Bucket;

pub const DEFAULT_TOTAL_NEW: usize = 10_000;

/// Bucket weights and the number of new questions per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioPlan {
    pub easy: u32,
    pub medium: u32,
    pub hard: u32,
    pub total_new: usize,
}

impl Default for RatioPlan {
    fn default() -> Self {
        RatioPlan {
            easy: 1,
            medium: 1,
            hard: 2,
            total_new: DEFAULT_TOTAL_NEW,
        }
    }
}

impl RatioPlan {
    pub fn new(easy: u32, medium: u32, hard: u32, total_new: usize) -> Self {
        RatioPlan {
            easy,
            medium,
            hard,
            total_new,
        }
    }

    pub fn weights(&self) -> [u64; 3] {
        [self.easy as u64, self.medium as u64, self.hard as u64]
    }

    pub fn validate(&self) -> Result<(), AllocationError> {
        if self.weights().iter().all(|w| *w == 0) {
            return Err(AllocationError::ZeroWeights);
        }
        if self.total_new == 0 {
            return Err(AllocationError::ZeroTotal);
        }
        Ok(())
    }
}

/// Number of new questions to derive from each bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Allocation {
    pub easy: usize,
    pub medium: usize,
    pub hard: usize,
}

impl Allocation {
    pub fn from_array(a: [usize; 3]) -> Self {
        Allocation {
            easy: a[0],
            medium: a[1],
            hard: a[2],
        }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.easy, self.medium, self.hard]
    }

    pub fn get(&self, b: Bucket) -> usize {
        self.as_array()[b.index()]
    }

    pub fn total(&self) -> usize {
        self.easy + self.medium + self.hard
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum AllocationError {
    #[error("ratio plan needs at least one positive weight")]
    ZeroWeights,
    #[error("ratio plan total_new must be positive")]
    ZeroTotal,
    #[error("every bucket is empty; nothing to evolve")]
    NoSources,
}

/// Largest-remainder apportionment of `total` by `weights`; ties in the
/// remainder go to the earlier bucket.
pub fn apportion(weights: [u64; 3], total: usize) -> [usize; 3] {
    let sum: u64 = weights.iter().sum();
    if sum == 0 {
        return [0; 3];
    }
    let t = total as u128;
    let mut out = [0usize; 3];
    let mut rems = [(0u128, 0usize); 3];
    for (i, w) in weights.iter().enumerate() {
        let num = t * *w as u128;
        out[i] = (num / sum as u128) as usize;
        rems[i] = (num % sum as u128, i);
    }
    let left = total - out.iter().sum::<usize>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i) in rems.iter().take(left) {
        out[*i] += 1;
    }
    out
}

/// Allocation for the given bucket sizes. Buckets without source questions
/// get no share; if that leaves no positive weight, the sizes themselves
/// become the weights.
pub fn allocate(plan: &RatioPlan, bucket_counts: [usize; 3]) -> Result<Allocation, AllocationError> {
    plan.validate()?;
    if bucket_counts.iter().all(|c| *c == 0) {
        return Err(AllocationError::NoSources);
    }
    let mut w = plan.weights();
    for (wi, c) in w.iter_mut().zip(bucket_counts) {
        if c == 0 {
            *wi = 0;
        }
    }
    if w.iter().all(|x| *x == 0) {
        log::warn!("no source questions in any weighted bucket; weighting by bucket size");
        w = bucket_counts.map(|c| c as u64);
    }
    let alloc = Allocation::from_array(apportion(w, plan.total_new));
    for b in Bucket::ALL {
        let (a, c) = (alloc.get(b), bucket_counts[b.index()]);
        if a > c {
            log::info!("{b}: {a} slots from {c} source questions; parents reused");
        }
    }
    Ok(alloc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn documented_examples() {
        let full = [5, 5, 5];
        assert_eq!(allocate(&RatioPlan::new(1, 1, 2, 8), full).unwrap().as_array(), [2, 2, 4]);
        assert_eq!(allocate(&RatioPlan::new(4, 0, 0, 8), full).unwrap().as_array(), [8, 0, 0]);
        assert_eq!(allocate(&RatioPlan::new(1, 1, 2, 10), full).unwrap().as_array(), [3, 2, 5]);
    }

    #[test]
    fn empty_buckets() {
        let plan = RatioPlan::new(1, 1, 2, 10);
        assert_eq!(allocate(&plan, [3, 0, 4]).unwrap().as_array(), [3, 0, 7]);
        assert_eq!(allocate(&RatioPlan::new(0, 0, 1, 6), [2, 1, 0]).unwrap().as_array(), [4, 2, 0]);
        assert_eq!(allocate(&plan, [0, 0, 0]), Err(AllocationError::NoSources));
        assert_eq!(allocate(&RatioPlan::new(0, 0, 0, 5), [1, 1, 1]), Err(AllocationError::ZeroWeights));
    }

    proptest! {
        #[test]
        fn sums_to_total(e in 0u32..20, m in 0u32..20, h in 0u32..20, total in 1usize..5000,
                         counts in proptest::array::uniform3(0usize..4)) {
            prop_assume!(e + m + h > 0 && counts.iter().any(|c| *c > 0));
            let a = allocate(&RatioPlan::new(e, m, h, total), counts).unwrap();
            prop_assert_eq!(a.total(), total);
            for b in Bucket::ALL {
                if counts[b.index()] == 0 {
                    prop_assert_eq!(a.get(b), 0);
                }
            }
        }

        #[test]
        fn within_one_of_quota(w in proptest::array::uniform3(1u64..50), total in 1usize..10_000) {
            let a = apportion(w, total);
            let sum: u64 = w.iter().sum();
            for i in 0..3 {
                let quota = total as f64 * w[i] as f64 / sum as f64;
                prop_assert!((a[i] as f64 - quota).abs() < 1.0);
            }
        }
    }
}
