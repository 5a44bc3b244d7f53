//! Pluggable scorer/generator interfaces abstracting every external model or
//! service the pipeline depends on, with deterministic mocks for offline
//! runs and an HTTP client for the hosted toxicity scorer.

mod cache;
pub mod mock;
mod remote;

pub use cache::{cached, CachedToxicity};
pub use remote::{
    remote_toxicity_client, AnalyzeTransport, HttpTransport, RateLimiter, RemoteChatCompleter,
    RemoteToxicityClient, RetryPolicy, TransportReply, ENV_LLM_API_KEY, ENV_TOXICITY_API_KEY,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Texts scoring at or above this are treated as toxic everywhere: span
/// verdicts, the regenerate-until-non-toxic loop, and the evaluation metrics.
pub const TOXIC_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum OracleError {
    /// A scripted mock ran out of entries; the test script is too short.
    #[error("script exhausted after {calls} calls")]
    ScriptExhausted { calls: usize },
    #[error("configuration error: {0}")]
    Config(String),
    /// The remote service kept failing after the retry budget.
    #[error("service error after {attempts} attempts: status {status}: {message}")]
    Service {
        attempts: usize,
        status: u16,
        message: String,
    },
    /// The service answered with something that does not match the protocol.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Scores the toxicity of a text in [0, 1].
pub trait ToxicityOracle: Send + Sync {
    fn score(&self, text: &str) -> Result<f64, OracleError>;
}

/// Semantic similarity of two texts in [-1, 1].
pub trait SimilarityOracle: Send + Sync {
    fn sim(&self, a: &str, b: &str) -> Result<f64, OracleError>;
}

/// Perplexity of a text under a held-out language model; positive, lower is
/// more fluent.
pub trait PerplexityOracle: Send + Sync {
    fn ppl(&self, text: &str) -> Result<f64, OracleError>;
}

/// Replaces placeholder occurrences in a masked text with generated content.
pub trait MaskFiller: Send + Sync {
    fn fill(&self, masked: &str, placeholder: &str) -> Result<String, OracleError>;
}

/// Samples continuations for a prompt. Implementations must return exactly
/// `config.num_samples` texts.
pub trait Generator: Send + Sync {
    fn generate(&self, prompt: &str, config: &SamplingConfig) -> Result<Vec<String>, OracleError>;
}

/// Instruction-following completion backend for the designed-prompt path.
pub trait ChatCompleter: Send + Sync {
    fn complete(&self, instruction: &str, input: &str) -> Result<String, OracleError>;
}

/// Nucleus-sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub top_p: f64,
    pub temperature: f64,
    /// Maximum generation length in tokens.
    pub max_length: usize,
    pub num_samples: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            top_p: 0.9,
            temperature: 1.0,
            max_length: 512,
            num_samples: 25,
        }
    }
}

impl SamplingConfig {
    /// A copy configured to draw a single sample.
    pub fn single(&self) -> Self {
        Self {
            num_samples: 1,
            ..self.clone()
        }
    }
}

macro_rules! forward_oracle_impls {
    ($wrapper:ident) => {
        impl<T: ToxicityOracle + ?Sized> ToxicityOracle for $wrapper<T> {
            fn score(&self, text: &str) -> Result<f64, OracleError> {
                (**self).score(text)
            }
        }

        impl<T: SimilarityOracle + ?Sized> SimilarityOracle for $wrapper<T> {
            fn sim(&self, a: &str, b: &str) -> Result<f64, OracleError> {
                (**self).sim(a, b)
            }
        }

        impl<T: PerplexityOracle + ?Sized> PerplexityOracle for $wrapper<T> {
            fn ppl(&self, text: &str) -> Result<f64, OracleError> {
                (**self).ppl(text)
            }
        }

        impl<T: MaskFiller + ?Sized> MaskFiller for $wrapper<T> {
            fn fill(&self, masked: &str, placeholder: &str) -> Result<String, OracleError> {
                (**self).fill(masked, placeholder)
            }
        }

        impl<T: Generator + ?Sized> Generator for $wrapper<T> {
            fn generate(
                &self,
                prompt: &str,
                config: &SamplingConfig,
            ) -> Result<Vec<String>, OracleError> {
                (**self).generate(prompt, config)
            }
        }

        impl<T: ChatCompleter + ?Sized> ChatCompleter for $wrapper<T> {
            fn complete(&self, instruction: &str, input: &str) -> Result<String, OracleError> {
                (**self).complete(instruction, input)
            }
        }
    };
}

use std::boxed::Box;
use std::sync::Arc;
forward_oracle_impls!(Arc);
forward_oracle_impls!(Box);
