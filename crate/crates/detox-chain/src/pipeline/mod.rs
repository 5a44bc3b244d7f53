//! The chain-construction engine: mask detected toxic spans, fill them
//! non-toxically via the regenerate-until-non-toxic loop, generate and
//! filter continuations, and assemble branch-correct chain records. Includes
//! the designed-prompt path that drives a remote completion API through the
//! same record assembly.

mod api;
mod generate;
mod mask;
mod run;
mod scorer;

pub use api::{
    run_api_pipeline, API_MASK_TOKEN, PROMPT_CONTEXT_JUDGEMENT, PROMPT_SPAN_FULFILLING,
    PROMPT_SPAN_MASKING, PROMPT_TOXIC_DETECTION,
};
pub use generate::{
    continue_text, filter_length, fulfill_spans, iterative_generate, ContinuationOutcome,
};
pub use mask::{mask_toxic_spans, MaskedText};
pub use run::{
    build_chain_record, run_pipeline, ChainOutcome, PipelineOracles, PipelineRun, RecordFailure,
    RunReport,
};
pub use scorer::{OracleSpanScorer, SpanScorer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracles::{OracleError, SamplingConfig};

/// Maximum candidate generations per record and stage.
pub const DEFAULT_MAX_ATTEMPTS: usize = 5;

/// Sentinel emitted by the continuation stage when the generated text fails
/// the similarity/perplexity filter. Byte-exact constant.
pub const INSUFFICIENT_CONTEXT_TEXT: &str =
    "##There is not enough context for the continual generation.";

/// Token-count bounds for generated texts on the designed-prompt path; both
/// boundaries are inclusive (strictly longer or shorter texts are rejected).
pub const LENGTH_FILTER_MIN_TOKENS: usize = 20;
pub const LENGTH_FILTER_MAX_TOKENS: usize = 128;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("{stage} failed on attempt {attempts}: {source}")]
    Oracle {
        stage: &'static str,
        attempts: usize,
        source: OracleError,
    },
    #[error(transparent)]
    Span(#[from] crate::span::SpanError),
    #[error(transparent)]
    Chain(#[from] crate::chain::ChainError),
    /// A systemic oracle failure stopped the run; the partial output is
    /// preserved so callers can flush it with a partial marker.
    #[error("run aborted after {} records: {message}", partial.report.records_out)]
    Aborted {
        partial: Box<run::PipelineRun>,
        message: String,
    },
}

/// Which stage dropped a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardStage {
    Detection,
    Fulfilling,
    Continuation,
    LengthFilter,
    ApiDetectionParse,
    ApiMaskingParse,
    ApiJudgmentParse,
}

impl DiscardStage {
    pub fn as_str(self) -> &'static str {
        match self {
            DiscardStage::Detection => "detection",
            DiscardStage::Fulfilling => "fulfilling",
            DiscardStage::Continuation => "continuation",
            DiscardStage::LengthFilter => "length_filter",
            DiscardStage::ApiDetectionParse => "api_detection_parse",
            DiscardStage::ApiMaskingParse => "api_masking_parse",
            DiscardStage::ApiJudgmentParse => "api_judgment_parse",
        }
    }
}

impl std::fmt::Display for DiscardStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Knobs for one construction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Span length / convolution stride.
    pub k: usize,
    /// Toxic-span detection threshold.
    pub lambda: f64,
    /// Max regeneration attempts per stage (K).
    pub max_attempts: usize,
    pub placeholder: String,
    /// Minimum similarity for a continuation to count as context-sufficient.
    pub sim_floor: f64,
    /// Maximum perplexity for a continuation to count as context-sufficient.
    pub ppl_ceiling: f64,
    /// Minimum rephrased-prompt length for the context judgment.
    pub min_prompt_tokens: usize,
    pub sampling: SamplingConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 2,
            lambda: 0.3,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            placeholder: "<MASK>".to_string(),
            sim_floor: 0.3,
            ppl_ceiling: 100.0,
            min_prompt_tokens: 3,
            sampling: SamplingConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.max_attempts < 1 {
            return Err(PipelineError::Precondition(
                "max_attempts must be at least 1".into(),
            ));
        }
        if !(-1.0..=1.0).contains(&self.sim_floor) {
            return Err(PipelineError::Precondition(format!(
                "sim_floor {} outside [-1, 1]",
                self.sim_floor
            )));
        }
        if self.ppl_ceiling <= 0.0 {
            return Err(PipelineError::Precondition(format!(
                "ppl_ceiling {} must be positive",
                self.ppl_ceiling
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(PipelineError::Precondition(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if self.k == 0 {
            return Err(PipelineError::Precondition("k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn templates(&self) -> crate::chain::TemplateSet {
        crate::chain::TemplateSet::new("###", self.placeholder.clone())
    }
}
