//! Record assembly and the corpus construction run.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::chain::{validate_record, ChainBranch, ChainCorpusRow, DetoxChainRecord};
use crate::oracles::{
    Generator, MaskFiller, OracleError, PerplexityOracle, SamplingConfig, SimilarityOracle,
    ToxicityOracle, TOXIC_THRESHOLD,
};
use crate::record::PromptRecord;
use crate::span::{detect_toxic_spans, WhitespaceTokenizer};

use super::generate::{continue_text, fulfill_spans};
use super::mask::mask_toxic_spans;
use super::scorer::SpanScorer;
use super::{DiscardStage, PipelineConfig, PipelineError};

/// The model/service bundle one construction run depends on.
pub struct PipelineOracles<'a> {
    pub toxicity: &'a (dyn ToxicityOracle + 'a),
    pub filler: &'a (dyn MaskFiller + 'a),
    pub generator: &'a (dyn Generator + 'a),
    pub similarity: &'a (dyn SimilarityOracle + 'a),
    pub perplexity: &'a (dyn PerplexityOracle + 'a),
}

/// What happened to one prompt.
#[derive(Debug, Clone, PartialEq)]
pub enum ChainOutcome {
    Emitted(DetoxChainRecord),
    Discarded { stage: DiscardStage, reason: String },
}

/// A prompt that errored instead of emitting or discarding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub id: String,
    pub message: String,
}

/// Corpus-level statistics for one run. Every artifact embeds the config
/// snapshot, seed, and tool version so a run can be reproduced byte-for-byte
/// under mock oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub tool_version: String,
    pub config: PipelineConfig,
    pub records_in: usize,
    pub records_out: usize,
    pub branch_counts: BTreeMap<String, usize>,
    pub discards_by_stage: BTreeMap<String, usize>,
    pub oracle_calls: BTreeMap<String, u64>,
    pub errors: Vec<RecordFailure>,
    /// Set when a systemic failure stopped the run early.
    pub partial: bool,
}

impl RunReport {
    pub(crate) fn new(config: &PipelineConfig) -> Self {
        Self {
            seed: config.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            records_in: 0,
            records_out: 0,
            branch_counts: ChainBranch::ALL
                .iter()
                .map(|b| (b.as_str().to_string(), 0))
                .collect(),
            discards_by_stage: BTreeMap::new(),
            oracle_calls: BTreeMap::new(),
            errors: Vec::new(),
            partial: false,
        }
    }

    pub(crate) fn count_branch(&mut self, branch: ChainBranch) {
        *self
            .branch_counts
            .entry(branch.as_str().to_string())
            .or_insert(0) += 1;
    }

    pub(crate) fn count_discard(&mut self, stage: DiscardStage) {
        *self
            .discards_by_stage
            .entry(stage.as_str().to_string())
            .or_insert(0) += 1;
    }
}

/// A finished (or aborted) construction run: the corpus rows in input order
/// plus the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub rows: Vec<ChainCorpusRow>,
    pub report: RunReport,
}

impl PipelineRun {
    /// Writes the corpus as JSON-lines.
    pub fn write_corpus(&self, writer: impl std::io::Write) -> std::io::Result<()> {
        crate::record::write_jsonl(writer, self.rows.iter())
            .map_err(|e| std::io::Error::other(e.to_string()))
    }

    pub fn records(&self) -> impl Iterator<Item = DetoxChainRecord> + '_ {
        self.rows.iter().cloned().map(ChainCorpusRow::into_record)
    }
}

// Counting adapters so the report can audit how often each backend was hit.

struct Counted<'a, T: ?Sized> {
    inner: &'a T,
    calls: &'a AtomicU64,
}

impl<T: ?Sized> Counted<'_, T> {
    fn bump(&self) {
        self.calls.fetch_add(1, Ordering::Relaxed);
    }
}

impl<'b> ToxicityOracle for Counted<'_, dyn ToxicityOracle + 'b> {
    fn score(&self, text: &str) -> Result<f64, OracleError> {
        self.bump();
        self.inner.score(text)
    }
}

impl<'b> MaskFiller for Counted<'_, dyn MaskFiller + 'b> {
    fn fill(&self, masked: &str, placeholder: &str) -> Result<String, OracleError> {
        self.bump();
        self.inner.fill(masked, placeholder)
    }
}

impl<'b> Generator for Counted<'_, dyn Generator + 'b> {
    fn generate(&self, prompt: &str, config: &SamplingConfig) -> Result<Vec<String>, OracleError> {
        self.bump();
        self.inner.generate(prompt, config)
    }
}

impl<'b> SimilarityOracle for Counted<'_, dyn SimilarityOracle + 'b> {
    fn sim(&self, a: &str, b: &str) -> Result<f64, OracleError> {
        self.bump();
        self.inner.sim(a, b)
    }
}

impl<'b> PerplexityOracle for Counted<'_, dyn PerplexityOracle + 'b> {
    fn ppl(&self, text: &str) -> Result<f64, OracleError> {
        self.bump();
        self.inner.ppl(text)
    }
}

/// Builds one chain record from a prompt, or reports why it was dropped.
///
/// Stages run in order: detection, then for toxic prompts masking and
/// fulfilling, then the context judgment and continuation. A `None` from any
/// regenerate-until-non-toxic stage discards the record.
pub fn build_chain_record(
    prompt: &PromptRecord,
    scorer: &dyn SpanScorer,
    oracles: &PipelineOracles<'_>,
    config: &PipelineConfig,
) -> Result<ChainOutcome, PipelineError> {
    if prompt.text.trim().is_empty() {
        return Err(PipelineError::Precondition(format!(
            "prompt `{}` has empty text",
            prompt.id
        )));
    }

    let scored = scorer.score_text(&prompt.text)?;
    let is_toxic = scored.global >= TOXIC_THRESHOLD;

    let mut masked_prompt = None;
    let mut rephrased_prompt = None;
    let continuation_input;

    if is_toxic {
        let toxic_indices = detect_toxic_spans(&scored.spans, config.lambda);
        if toxic_indices.is_empty() {
            return Ok(ChainOutcome::Discarded {
                stage: DiscardStage::Detection,
                reason: format!(
                    "global score {:.3} is toxic but no span reached lambda {}",
                    scored.global, config.lambda
                ),
            });
        }
        let masked = mask_toxic_spans(&scored.segmentation, &toxic_indices, &config.placeholder);
        let Some(rephrased) = fulfill_spans(
            &masked,
            oracles.filler,
            oracles.toxicity,
            config.max_attempts,
        )?
        else {
            return Ok(ChainOutcome::Discarded {
                stage: DiscardStage::Fulfilling,
                reason: format!("all {} fill attempts scored toxic", config.max_attempts),
            });
        };
        masked_prompt = Some(masked.text);
        continuation_input = rephrased.clone();
        rephrased_prompt = Some(rephrased);
    } else {
        continuation_input = prompt.text.clone();
    }

    let outcome = continue_text(
        &continuation_input,
        oracles.generator,
        oracles.toxicity,
        oracles.similarity,
        oracles.perplexity,
        &WhitespaceTokenizer,
        config,
    )?;
    let Some(outcome) = outcome else {
        return Ok(ChainOutcome::Discarded {
            stage: DiscardStage::Continuation,
            reason: format!(
                "all {} continuation attempts scored toxic",
                config.max_attempts
            ),
        });
    };

    let branch = ChainBranch::from_flags(is_toxic, outcome.has_context);
    let record = DetoxChainRecord {
        id: prompt.id.clone(),
        prompt: prompt.text.clone(),
        is_toxic,
        masked_prompt,
        rephrased_prompt,
        has_context: outcome.has_context,
        continuation: outcome.has_context.then_some(outcome.continuation),
        branch,
    };
    debug_assert!(validate_record(&record).is_empty());
    Ok(ChainOutcome::Emitted(record))
}

pub(crate) fn is_systemic(err: &PipelineError) -> bool {
    match err {
        PipelineError::Oracle { source, .. } => matches!(
            source,
            OracleError::Service { .. }
                | OracleError::Config(_)
                | OracleError::ScriptExhausted { .. }
                | OracleError::Io(_)
        ),
        _ => false,
    }
}

/// Processes every prompt in order and assembles the chain corpus plus a run
/// report. Per-record errors are recorded and skipped; discarded records are
/// logged and never appear in the output; a systemic oracle failure aborts
/// with the partial output preserved.
pub fn run_pipeline(
    prompts: &[PromptRecord],
    scorer: &dyn SpanScorer,
    oracles: &PipelineOracles<'_>,
    config: &PipelineConfig,
) -> Result<PipelineRun, PipelineError> {
    config.validate()?;
    let templates = config.templates();
    let mut report = RunReport::new(config);
    let mut rows = Vec::new();

    let counters: BTreeMap<&'static str, AtomicU64> = [
        ("toxicity", AtomicU64::new(0)),
        ("filler", AtomicU64::new(0)),
        ("generator", AtomicU64::new(0)),
        ("similarity", AtomicU64::new(0)),
        ("perplexity", AtomicU64::new(0)),
    ]
    .into_iter()
    .collect();
    let counted = PipelineOracles {
        toxicity: &Counted {
            inner: oracles.toxicity,
            calls: &counters["toxicity"],
        },
        filler: &Counted {
            inner: oracles.filler,
            calls: &counters["filler"],
        },
        generator: &Counted {
            inner: oracles.generator,
            calls: &counters["generator"],
        },
        similarity: &Counted {
            inner: oracles.similarity,
            calls: &counters["similarity"],
        },
        perplexity: &Counted {
            inner: oracles.perplexity,
            calls: &counters["perplexity"],
        },
    };

    let mut abort: Option<String> = None;
    for prompt in prompts {
        report.records_in += 1;
        match build_chain_record(prompt, scorer, &counted, config) {
            Ok(ChainOutcome::Emitted(record)) => {
                report.count_branch(record.branch);
                report.records_out += 1;
                rows.push(ChainCorpusRow::from_record(&record, &templates)?);
            }
            Ok(ChainOutcome::Discarded { stage, reason }) => {
                log::info!("discarded `{}` at {stage}: {reason}", prompt.id);
                report.count_discard(stage);
            }
            Err(err) if is_systemic(&err) => {
                abort = Some(err.to_string());
                break;
            }
            Err(err) => {
                log::warn!("record `{}` failed: {err}", prompt.id);
                report.errors.push(RecordFailure {
                    id: prompt.id.clone(),
                    message: err.to_string(),
                });
            }
        }
    }

    for (name, counter) in &counters {
        report
            .oracle_calls
            .insert(name.to_string(), counter.load(Ordering::Relaxed));
    }

    if let Some(message) = abort {
        report.partial = true;
        return Err(PipelineError::Aborted {
            partial: Box::new(PipelineRun { rows, report }),
            message,
        });
    }
    Ok(PipelineRun { rows, report })
}
