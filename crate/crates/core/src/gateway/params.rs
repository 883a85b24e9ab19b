use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_NEW_TOKENS: u32 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodingMode {
    Greedy,
    Nucleus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub mode: DecodingMode,
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
    pub n_samples: u32,
    /// Ask the backend for per-token log-probabilities.
    #[serde(default)]
    pub logprobs: bool,
    /// Sampling seed for backends that honor one (the mock always does).
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ParamsError {
    #[error("greedy decoding produces exactly one sample, {0} requested")]
    GreedyMultiSample(u32),
    #[error("n_samples must be positive")]
    NoSamples,
    #[error("max_new_tokens must be positive")]
    NoTokens,
    #[error("temperature must be non-negative, got {0}")]
    Temperature(f64),
    #[error("top_p must be in (0, 1], got {0}")]
    TopP(f64),
}

impl DecodingParams {
    pub fn greedy() -> Self {
        DecodingParams {
            mode: DecodingMode::Greedy,
            temperature: 0.0,
            top_p: 1.0,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            n_samples: 1,
            logprobs: false,
            seed: None,
        }
    }

    /// Nucleus sampling at temperature 0.2, top-p 0.95.
    pub fn nucleus(n_samples: u32) -> Self {
        DecodingParams {
            mode: DecodingMode::Nucleus,
            temperature: 0.2,
            top_p: 0.95,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            n_samples,
            logprobs: false,
            seed: None,
        }
    }

    /// Greedy for one sample, nucleus otherwise.
    pub fn for_samples(n_samples: u32) -> Self {
        if n_samples <= 1 {
            Self::greedy()
        } else {
            Self::nucleus(n_samples)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_max_new_tokens(mut self, n: u32) -> Self {
        self.max_new_tokens = n;
        self
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.n_samples == 0 {
            return Err(ParamsError::NoSamples);
        }
        if self.max_new_tokens == 0 {
            return Err(ParamsError::NoTokens);
        }
        match self.mode {
            DecodingMode::Greedy if self.n_samples != 1 => {
                Err(ParamsError::GreedyMultiSample(self.n_samples))
            }
            DecodingMode::Greedy => Ok(()),
            DecodingMode::Nucleus => {
                if !(self.temperature >= 0.0) {
                    return Err(ParamsError::Temperature(self.temperature));
                }
                if !(self.top_p > 0.0 && self.top_p <= 1.0) {
                    return Err(ParamsError::TopP(self.top_p));
                }
                Ok(())
            }
        }
    }
}
