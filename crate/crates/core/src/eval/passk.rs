//! Pass@k estimators.

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum PassAtKError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the {n} samples available")]
    TooFewSamples { k: usize, n: usize },
    #[error("solved count {c} exceeds sample count {n}")]
    BadCount { c: usize, n: usize },
    #[error("no problems to score")]
    NoProblems,
}

/// Share of problems with at least one solved sample among their first `k`.
pub fn pass_at_k_simple(verdicts: &[Vec<bool>], k: usize) -> Result<f64, PassAtKError> {
    if k == 0 {
        return Err(PassAtKError::ZeroK);
    }
    if verdicts.is_empty() {
        return Err(PassAtKError::NoProblems);
    }
    let mut solved = 0usize;
    for v in verdicts {
        if v.len() < k {
            return Err(PassAtKError::TooFewSamples { k, n: v.len() });
        }
        if v[..k].iter().any(|s| *s) {
            solved += 1;
        }
    }
    Ok(solved as f64 / verdicts.len() as f64)
}

/// Probability that a random size-`k` subset of `n` samples, `c` of them
/// solved, contains a solved one: `1 − Π_{j<k} (n−c−j)/(n−j)`.
pub fn pass_at_k_unbiased(n: usize, c: usize, k: usize) -> Result<f64, PassAtKError> {
    if k == 0 {
        return Err(PassAtKError::ZeroK);
    }
    if k > n {
        return Err(PassAtKError::TooFewSamples { k, n });
    }
    if c > n {
        return Err(PassAtKError::BadCount { c, n });
    }
    if n - c < k {
        return Ok(1.0);
    }
    if k == 1 {
        // 1 − (n−c)/n rounds differently from c/n
        return Ok(c as f64 / n as f64);
    }
    let mut fail = 1.0f64;
    for j in 0..k {
        fail *= (n - c - j) as f64 / (n - j) as f64;
    }
    Ok(1.0 - fail)
}

/// Mean of the unbiased estimate over problems.
pub fn pass_at_k_mean(verdicts: &[Vec<bool>], k: usize) -> Result<f64, PassAtKError> {
    if verdicts.is_empty() {
        return Err(PassAtKError::NoProblems);
    }
    let mut total = 0.0;
    for v in verdicts {
        let c = v.iter().filter(|s| **s).count();
        total += pass_at_k_unbiased(v.len(), c, k)?;
    }
    Ok(total / verdicts.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive subset enumeration over n samples with the first c solved.
    fn enumerate(n: usize, c: usize, k: usize) -> f64 {
        let (mut hit, mut all) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            all += 1;
            if (0..c).any(|i| mask & (1 << i) != 0) {
                hit += 1;
            }
        }
        hit as f64 / all as f64
    }

    #[test]
    fn examples() {
        assert_eq!(pass_at_k_simple(&[vec![true]], 1).unwrap(), 1.0);
        assert_eq!(pass_at_k_simple(&[vec![true], vec![false]], 1).unwrap(), 0.5);
        // hand-enumerated at k = 2: problems 1, 2 and 4 solved in the first two
        let v = vec![
            vec![false, true, false],
            vec![true, false, false],
            vec![false, false, true],
            vec![true, true, true],
        ];
        assert_eq!(pass_at_k_simple(&v, 2).unwrap(), 0.75);
        assert_eq!(pass_at_k_unbiased(5, 5, 3).unwrap(), 1.0);
        assert_eq!(pass_at_k_unbiased(5, 0, 3).unwrap(), 0.0);
        assert!((pass_at_k_unbiased(5, 2, 1).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert_eq!(pass_at_k_simple(&[vec![true]], 2), Err(PassAtKError::TooFewSamples { k: 2, n: 1 }));
        assert_eq!(pass_at_k_simple(&[], 1), Err(PassAtKError::NoProblems));
        assert_eq!(pass_at_k_unbiased(3, 4, 1), Err(PassAtKError::BadCount { c: 4, n: 3 }));
        assert_eq!(pass_at_k_unbiased(3, 1, 0), Err(PassAtKError::ZeroK));
        assert_eq!(pass_at_k_unbiased(3, 1, 4), Err(PassAtKError::TooFewSamples { k: 4, n: 3 }));
    }

    #[test]
    fn matches_enumeration_up_to_eight() {
        for n in 1..=8 {
            for c in 0..=n {
                for k in 1..=n {
                    let got = pass_at_k_unbiased(n, c, k).unwrap();
                    assert!((got - enumerate(n, c, k)).abs() < 1e-12, "n={n} c={c} k={k}");
                }
                assert_eq!(pass_at_k_unbiased(n, c, 1).unwrap(), c as f64 / n as f64);
            }
        }
    }

    #[test]
    fn simple_equals_unbiased_at_one() {
        for v in [vec![vec![true]], vec![vec![false]], vec![vec![true], vec![false], vec![false]]] {
            assert_eq!(pass_at_k_simple(&v, 1).unwrap(), pass_at_k_mean(&v, 1).unwrap());
        }
    }

    proptest! {
        #[test]
        fn monotone(n in 1usize..30, c in 0usize..30, k in 1usize..30) {
            prop_assume!(c <= n && k <= n);
            let p = pass_at_k_unbiased(n, c, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            if k < n {
                prop_assert!(pass_at_k_unbiased(n, c, k + 1).unwrap() >= p);
            }
            if c < n {
                prop_assert!(pass_at_k_unbiased(n, c + 1, k).unwrap() >= p);
            }
        }
    }
}
