//! Reference numerics for the supervised and the contrastive objective.
//!
//! Supervised (CSL): mean over sequences of the negative summed token
//! log-likelihood.
//!
//! Contrastive (FCL): for each pair, with `r_c = Σ policy_c − Σ reference_c`
//! and `r_f = Σ policy_f − Σ reference_f`,
//!
//! ```text
//! loss = −ln σ(β · (r_c − r_f))
//! ```
//!
//! averaged over pairs.

use serde::{Deserialize, Serialize};

pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("sequence {0} is empty")]
    EmptySequence(usize),
    #[error("sequence {seq}, token {token}: log-probability {value} is not a finite value ≤ 0")]
    BadLogprob { seq: usize, token: usize, value: f64 },
    #[error("beta must be positive and finite, got {0}")]
    BadBeta(f64),
}

/// Token log-probabilities of a correct and a faulty solution under the
/// policy being trained and the frozen reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub question_id: String,
    pub policy_correct: Vec<f64>,
    pub reference_correct: Vec<f64>,
    pub policy_faulty: Vec<f64>,
    pub reference_faulty: Vec<f64>,
    pub beta: f64,
}

impl PreferencePair {
    pub fn validate(&self, index: usize) -> Result<(), LossError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(LossError::BadBeta(self.beta));
        }
        for seq in [
            &self.policy_correct,
            &self.reference_correct,
            &self.policy_faulty,
            &self.reference_faulty,
        ] {
            if seq.is_empty() {
                return Err(LossError::EmptySequence(index));
            }
            check_logprobs(index, seq)?;
        }
        Ok(())
    }

    /// `r_c − r_f`, the unscaled preference margin.
    pub fn margin(&self) -> f64 {
        let sum = |v: &[f64]| v.iter().sum::<f64>();
        let r_c = sum(&self.policy_correct) - sum(&self.reference_correct);
        let r_f = sum(&self.policy_faulty) - sum(&self.reference_faulty);
        r_c - r_f
    }
}

fn check_logprobs(seq: usize, lps: &[f64]) -> Result<(), LossError> {
    match lps.iter().position(|&v| !(v <= 0.0) || !v.is_finite()) {
        Some(token) => Err(LossError::BadLogprob {
            seq,
            token,
            value: lps[token],
        }),
        None => Ok(()),
    }
}

/// Mean over sequences of `−Σ logprob`.
pub fn csl_loss(batch: &[Vec<f64>]) -> Result<f64, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut total = 0.0;
    for (i, seq) in batch.iter().enumerate() {
        if seq.is_empty() {
            return Err(LossError::EmptySequence(i));
        }
        check_logprobs(i, seq)?;
        total -= seq.iter().sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

/// `−ln σ(z) = ln(1 + e^{−z})` without overflow.
pub fn neg_log_sigmoid(z: f64) -> f64 {
    if z < -30.0 {
        -z + z.exp().ln_1p()
    } else {
        (-z).exp().ln_1p()
    }
}

/// Logistic function, stable for large |z|.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Contrastive loss for a single pair given its margin.
pub fn fcl_loss_from_margin(margin: f64, beta: f64) -> f64 {
    neg_log_sigmoid(beta * margin)
}

/// `d loss / d margin = −β σ(−β·margin)`.
pub fn fcl_gradient_from_margin(margin: f64, beta: f64) -> f64 {
    -beta * sigmoid(-beta * margin)
}

pub fn fcl_loss(pairs: &[PreferencePair]) -> Result<f64, LossError> {
    if pairs.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut total = 0.0;
    for (i, p) in pairs.iter().enumerate() {
        p.validate(i)?;
        total += fcl_loss_from_margin(p.margin(), p.beta);
    }
    Ok(total / pairs.len() as f64)
}

pub fn fcl_margin_gradient(pair: &PreferencePair) -> Result<f64, LossError> {
    pair.validate(0)?;
    Ok(fcl_gradient_from_margin(pair.margin(), pair.beta))
}
