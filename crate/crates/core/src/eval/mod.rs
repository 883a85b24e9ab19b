//! Benchmark evaluation: Pass@k and mean rubric score.

mod harness;
mod passk;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use harness::{
    build_program, completion_prompt, load_problems, mean_rubric_score, postprocess, BenchContext, BenchmarkError,
    BenchmarkProblem, MeanScore, NothingScored, ProblemVerdicts,
};
pub use passk::{pass_at_k_mean, pass_at_k_simple, pass_at_k_unbiased, PassAtKError};

use crate::gateway::DecodingParams;
use crate::prompts::PromptSet;

pub const REPORT_FILE: &str = "eval_report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemReport {
    pub id: String,
    /// Verdict of the greedy sample, when k = 1 was requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub greedy: Vec<bool>,
    /// Verdicts of the nucleus samples, when some k > 1 was requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sampled: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub suite: String,
    pub language: String,
    /// Samples per problem for the largest k.
    pub n: usize,
    pub k_values: Vec<usize>,
    /// Unbiased estimate per k, averaged over evaluated problems.
    pub pass_at_k: BTreeMap<String, f64>,
    /// Any-of-the-first-k rate per k.
    pub pass_at_k_simple: BTreeMap<String, f64>,
    pub mean_score: Option<f64>,
    pub per_problem: Vec<ProblemReport>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("k values must be non-empty and positive")]
    BadK,
    #[error("no problem could be evaluated")]
    NothingEvaluated,
    #[error(transparent)]
    PassAtK(#[from] PassAtKError),
}

/// Parses `1,10` style k lists.
pub fn parse_k_list(s: &str) -> Result<Vec<usize>, EvalError> {
    let mut ks: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| EvalError::BadK))
        .collect::<Result<_, _>>()?;
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(EvalError::BadK);
    }
    Ok(ks)
}

pub struct EvalRequest<'a> {
    pub suite: &'a str,
    pub k_values: &'a [usize],
    /// Scorer backend and prompts for the mean rubric score, if wanted.
    pub scorer: Option<(&'a str, &'a PromptSet)>,
    /// Template for nucleus sampling; `n_samples` is set from the largest k.
    pub nucleus: DecodingParams,
}

/// Pass@1 from one greedy sample; larger k from `max k` nucleus samples.
pub fn evaluate(
    ctx: &BenchContext<'_>,
    problems: &[BenchmarkProblem],
    req: &EvalRequest<'_>,
) -> Result<EvalReport, EvalError> {
    if req.k_values.is_empty() || req.k_values.contains(&0) {
        return Err(EvalError::BadK);
    }
    let max_k = *req.k_values.iter().max().expect("non-empty");
    let greedy = req
        .k_values
        .contains(&1)
        .then(|| ctx.run_benchmark(problems, &DecodingParams::greedy()));
    let sampled = (max_k > 1).then(|| {
        let mut p = req.nucleus.clone();
        p.n_samples = max_k as u32;
        ctx.run_benchmark(problems, &p)
    });

    let usable = |v: &Option<Vec<ProblemVerdicts>>| -> Vec<Vec<bool>> {
        v.iter()
            .flatten()
            .filter(|p| !p.is_skipped())
            .map(|p| p.solved.clone())
            .collect()
    };
    let (g, s) = (usable(&greedy), usable(&sampled));
    let mut pass_at_k = BTreeMap::new();
    let mut simple = BTreeMap::new();
    for &k in req.k_values {
        let v = if k == 1 { &g } else { &s };
        if v.is_empty() {
            return Err(EvalError::NothingEvaluated);
        }
        pass_at_k.insert(k.to_string(), pass_at_k_mean(v, k)?);
        simple.insert(k.to_string(), pass_at_k_simple(v, k)?);
    }

    let mut notes = Vec::new();
    let primary = greedy.as_ref().or(sampled.as_ref()).expect("some run");
    let mean_score = match req.scorer {
        Some((scorer, prompts)) => {
            let firsts: Vec<Option<String>> = primary.iter().map(|p| p.first_completion.clone()).collect();
            match mean_rubric_score(ctx.gateway, scorer, prompts, problems, &firsts) {
                Ok(m) => {
                    if !m.excluded.is_empty() {
                        notes.push(format!("unscored problems: {}", m.excluded.join(", ")));
                    }
                    Some(m.mean)
                }
                Err(e) => {
                    notes.push(e.to_string());
                    None
                }
            }
        }
        None => None,
    };
    let per_problem: Vec<ProblemReport> = problems
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let gv = greedy.as_ref().map(|v| &v[i]);
            let sv = sampled.as_ref().map(|v| &v[i]);
            ProblemReport {
                id: p.id.clone(),
                greedy: gv.map(|v| v.solved.clone()).unwrap_or_default(),
                sampled: sv.map(|v| v.solved.clone()).unwrap_or_default(),
                note: gv.and_then(|v| v.note.clone()).or_else(|| sv.and_then(|v| v.note.clone())),
            }
        })
        .collect();
    for p in &per_problem {
        if let Some(n) = &p.note {
            notes.push(format!("{}: {n}", p.id));
        }
    }
    let mut langs: Vec<&str> = problems.iter().map(|p| p.language.as_str()).collect();
    langs.sort_unstable();
    langs.dedup();
    Ok(EvalReport {
        suite: req.suite.to_string(),
        language: if langs.len() == 1 { langs[0].to_string() } else { langs.join("+") },
        n: max_k,
        k_values: req.k_values.to_vec(),
        pass_at_k,
        pass_at_k_simple: simple,
        mean_score,
        per_problem,
        notes,
    })
}
