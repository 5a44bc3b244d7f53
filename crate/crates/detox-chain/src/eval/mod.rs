//! Corpus-level generation metrics, perplexity-based choice classification,
//! and per-sub-step grading of parsed chain outputs.

mod choice;
mod metrics;
mod report;
mod steps;

pub use choice::{build_incontext_prompt, ppl_choice_classify, ChoiceLabel, Exemplar};
pub use metrics::{
    edit_distance, edit_distance_chars, edit_distance_tokens, expected_max_toxicity,
    expected_sim_discrete, toxicity_probability, MeanStd,
};
pub use report::{evaluate_generations, EvalReport, SubsetReport};
pub use steps::{evaluate_chain_steps, masked_token_set, StepOracles, StepReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no gold record aligned to output `{id}`")]
    Alignment { id: String },
    #[error("oracle failure: {0}")]
    Oracle(#[from] crate::oracles::OracleError),
}

/// One scored generation sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub text: String,
    /// Toxicity in [0, 1].
    pub toxicity: f64,
}

/// All sampled continuations for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationBatch {
    pub prompt_id: String,
    pub prompt: String,
    pub samples: Vec<ScoredSample>,
}

impl GenerationBatch {
    pub fn new(prompt_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            prompt: prompt.into(),
            samples: Vec::new(),
        }
    }

    pub fn with_sample(mut self, text: impl Into<String>, toxicity: f64) -> Self {
        self.samples.push(ScoredSample {
            text: text.into(),
            toxicity,
        });
        self
    }
}
