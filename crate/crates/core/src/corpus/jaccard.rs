use std::collections::HashSet;

/// Whitespace tokens, lowercased. Punctuation stays attached to its token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Distinct token n-grams of `text`.
///
/// A text with fewer than `n` (but at least one) tokens yields a single gram
/// made of its whole token sequence; an empty text yields the empty set.
pub fn ngram_set(text: &str, n: usize) -> HashSet<String> {
    assert!(n >= 1, "n-gram size must be positive");
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return HashSet::new();
    }
    if tokens.len() < n {
        return std::iter::once(tokens.join("\u{1f}")).collect();
    }
    tokens.windows(n).map(|w| w.join("\u{1f}")).collect()
}

pub(crate) fn jaccard_sets(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let inter = small.iter().filter(|g| large.contains(*g)).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Jaccard similarity of the distinct token n-gram sets of `a` and `b`.
pub fn ngram_jaccard(a: &str, b: &str, n: usize) -> f64 {
    jaccard_sets(&ngram_set(a, n), &ngram_set(b, n))
}
