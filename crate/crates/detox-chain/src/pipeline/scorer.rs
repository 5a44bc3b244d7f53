//! Span-scoring backends for detection inside the pipeline.

use crate::oracles::ToxicityOracle;
use crate::span::{segment_spans, ScoreResult, SpanCnnModel, SpanScoreVector, WhitespaceTokenizer};

use super::PipelineError;

/// Anything that can produce a global score plus per-span scores for a text.
pub trait SpanScorer: Send + Sync {
    fn score_text(&self, text: &str) -> Result<ScoreResult, PipelineError>;
    fn k(&self) -> usize;
}

impl SpanScorer for SpanCnnModel {
    fn score_text(&self, text: &str) -> Result<ScoreResult, PipelineError> {
        Ok(self.score(text)?)
    }

    fn k(&self) -> usize {
        SpanCnnModel::k(self)
    }
}

/// Detection backed directly by a toxicity oracle: the global score is the
/// oracle's score of the whole text and each span score is the oracle's
/// score of the span surface. This is the off-the-shelf-scorer route and the
/// deterministic mock used in offline runs.
pub struct OracleSpanScorer<T> {
    oracle: T,
    k: usize,
}

impl<T: ToxicityOracle> OracleSpanScorer<T> {
    pub fn new(oracle: T, k: usize) -> Self {
        Self { oracle, k }
    }
}

impl<T: ToxicityOracle> SpanScorer for OracleSpanScorer<T> {
    fn score_text(&self, text: &str) -> Result<ScoreResult, PipelineError> {
        let segmentation = segment_spans(text, &WhitespaceTokenizer, self.k)?;
        let wrap = |source| PipelineError::Oracle {
            stage: "span scoring",
            attempts: 1,
            source,
        };
        let global = self.oracle.score(text).map_err(wrap)?;
        let scores = segmentation
            .spans
            .iter()
            .map(|span| self.oracle.score(&span.text))
            .collect::<Result<Vec<_>, _>>()
            .map_err(wrap)?;
        Ok(ScoreResult {
            global,
            spans: SpanScoreVector { scores, k: self.k },
            truncated: false,
            segmentation,
        })
    }

    fn k(&self) -> usize {
        self.k
    }
}
