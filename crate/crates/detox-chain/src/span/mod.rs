//! Span-level toxicity model: segment text into k-token spans, score global
//! and per-span toxicity with a small convolutional network, train it with
//! the re-weighted joint loss, and threshold span scores into detections.

mod augment;
mod loss;
mod model;
mod segment;
mod tokenize;
mod train;

pub use augment::{augment_with_toxic_spans, BankSpan, SpanBank};
pub use loss::{compute_loss, AlphaPolicy, LossBreakdown, SpanTrainingSample};
pub use model::{ModelOutputs, ScoreResult, SpanCnnConfig, SpanCnnModel};
pub use segment::{segment_spans, Span, SpanSegmentation};
pub use tokenize::{Tokenizer, WhitespaceTokenizer};
pub use train::{
    loss_gradients, train_span_cnn, Algorithm, Gradients, OptimizerConfig, TrainConfig,
    TrainedSpanCnn, TrainingReport, TrainingRow,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpanError {
    #[error("empty input text")]
    EmptyInput,
    #[error("span length k must be >= 1, got {0}")]
    InvalidK(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sample `{id}` is unlabeled and no toxicity oracle was supplied")]
    Unlabeled { id: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint k={found} does not match requested k={expected}")]
    KMismatch { expected: usize, found: usize },
    #[error("oracle failure while labeling: {0}")]
    Oracle(#[from] crate::oracles::OracleError),
}

/// Per-span toxicity scores for one text, with the stride that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanScoreVector {
    pub scores: Vec<f64>,
    pub k: usize,
}

impl SpanScoreVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Returns the indices of toxic spans, i.e. `{i : scores[i] >= lambda}`, in
/// ascending order. The boundary is inclusive.
pub fn detect_toxic_spans(scores: &SpanScoreVector, lambda: f64) -> Vec<usize> {
    debug_assert!((0.0..=1.0).contains(&lambda), "lambda outside [0, 1]");
    scores
        .scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= lambda)
        .map(|(i, _)| i)
        .collect()
}
