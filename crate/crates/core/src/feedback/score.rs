//! Rubric score extraction from free-form scorer output.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const MIN_SCORE: u8 = 1;
pub const MAX_SCORE: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseSource {
    /// Taken from a `Score: <k>` line within range.
    TrailingLine,
    /// No score line; salvaged from elsewhere in the text.
    Recovered,
    /// A score line whose value fell outside the scale.
    Clamped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricScore {
    pub total: u8,
    pub analysis_text: String,
    pub parse_source: ParseSource,
}

impl RubricScore {
    /// Scorer-style text that parses back to the same total.
    pub fn render(&self) -> String {
        if self.analysis_text.is_empty() {
            format!("Score: {}", self.total)
        } else {
            format!("{}\nScore: {}", self.analysis_text.trim_end(), self.total)
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("no score in scorer output ({excerpt:?})")]
pub struct Unscorable {
    pub excerpt: String,
}

fn score_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // tolerates markdown emphasis such as **Score:** 5 and "Score: 5/6"
    RE.get_or_init(|| Regex::new(r"(?i)^[\s*#_>-]*score[\s*_]*:[\s*_]*([+-]?\d+)").expect("regex"))
}

fn out_of_six() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(\d+)\s*(?:out\s+of|/)\s*6\b").expect("regex"))
}

fn integers() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+").expect("regex"))
}

/// Integers not glued to letters, underscores or decimal points.
fn standalone_integers(text: &str) -> Vec<i64> {
    let bytes = text.as_bytes();
    integers()
        .find_iter(text)
        .filter(|m| {
            let before = m.start().checked_sub(1).map(|i| bytes[i]);
            let after = bytes.get(m.end()).copied();
            let after2 = bytes.get(m.end() + 1).copied();
            let glued_before = before.is_some_and(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'.');
            let glued_after = after.is_some_and(|b| b.is_ascii_alphanumeric() || b == b'_')
                || (after == Some(b'.') && after2.is_some_and(|b| b.is_ascii_digit()));
            !glued_before && !glued_after
        })
        .filter_map(|m| m.as_str().parse().ok())
        .collect()
}

/// Extracts the 1..=6 total from scorer output.
///
/// The last `Score: <k>` line wins, clamped into range. Without one, the last
/// "k out of 6" or "k/6" is used, then the last standalone integer in range.
pub fn parse_score(output: &str) -> Result<RubricScore, Unscorable> {
    let analysis_text = output.to_string();
    let line_value = output
        .lines()
        .rev()
        .find_map(|l| score_line().captures(l).map(|c| c[1].parse::<i64>()));
    if let Some(v) = line_value {
        let v = v.unwrap_or(i64::MAX);
        let clamped = v.clamp(MIN_SCORE as i64, MAX_SCORE as i64);
        return Ok(RubricScore {
            total: clamped as u8,
            analysis_text,
            parse_source: if clamped == v {
                ParseSource::TrailingLine
            } else {
                ParseSource::Clamped
            },
        });
    }
    let in_range = |v: i64| (MIN_SCORE as i64..=MAX_SCORE as i64).contains(&v);
    let recovered = out_of_six()
        .captures_iter(output)
        .filter_map(|c| c[1].parse::<i64>().ok())
        .filter(|v| in_range(*v))
        .last()
        .or_else(|| standalone_integers(output).into_iter().rfind(|v| in_range(*v)));
    match recovered {
        Some(v) => Ok(RubricScore {
            total: v as u8,
            analysis_text,
            parse_source: ParseSource::Recovered,
        }),
        None => Err(Unscorable {
            excerpt: output.chars().take(120).collect(),
        }),
    }
}
