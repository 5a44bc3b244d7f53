//! The regenerate-until-non-toxic loop and the stages built on it.

use crate::oracles::{
    Generator, MaskFiller, OracleError, PerplexityOracle, SimilarityOracle, ToxicityOracle,
    TOXIC_THRESHOLD,
};
use crate::span::Tokenizer;

use super::mask::MaskedText;
use super::{PipelineConfig, PipelineError, INSUFFICIENT_CONTEXT_TEXT};

/// Calls `produce` until a candidate scores non-toxic, at most
/// `max_attempts` times in total. Returns the first non-toxic candidate, or
/// `None` when every candidate was toxic (the record is then discarded).
/// Producer failures propagate with the attempt count.
pub fn iterative_generate<F>(
    mut produce: F,
    toxicity: &dyn ToxicityOracle,
    max_attempts: usize,
) -> Result<Option<String>, PipelineError>
where
    F: FnMut() -> Result<String, OracleError>,
{
    debug_assert!(max_attempts >= 1);
    for attempt in 1..=max_attempts {
        let candidate = produce().map_err(|source| PipelineError::Oracle {
            stage: "generation",
            attempts: attempt,
            source,
        })?;
        let score = toxicity
            .score(&candidate)
            .map_err(|source| PipelineError::Oracle {
                stage: "toxicity scoring",
                attempts: attempt,
                source,
            })?;
        if score < TOXIC_THRESHOLD {
            return Ok(Some(candidate));
        }
    }
    Ok(None)
}

/// Fills the placeholders of a masked text with non-toxic content, retrying
/// up to `max_attempts` times. A fill that still contains the placeholder is
/// malformed and counts as a failed attempt. Returns `None` when no attempt
/// produced a non-toxic, fully-filled text.
pub fn fulfill_spans(
    masked: &MaskedText,
    filler: &dyn MaskFiller,
    toxicity: &dyn ToxicityOracle,
    max_attempts: usize,
) -> Result<Option<String>, PipelineError> {
    if masked.placeholder_count() == 0 {
        return Err(PipelineError::Precondition(
            "masked text contains no placeholder to fill".into(),
        ));
    }
    for attempt in 1..=max_attempts {
        let filled = filler
            .fill(&masked.text, &masked.placeholder)
            .map_err(|source| PipelineError::Oracle {
                stage: "span fulfilling",
                attempts: attempt,
                source,
            })?;
        if filled.contains(&masked.placeholder) {
            log::debug!("fill attempt {attempt} left the placeholder in place");
            continue;
        }
        let score = toxicity
            .score(&filled)
            .map_err(|source| PipelineError::Oracle {
                stage: "toxicity scoring",
                attempts: attempt,
                source,
            })?;
        if score < TOXIC_THRESHOLD {
            return Ok(Some(filled));
        }
    }
    Ok(None)
}

/// Outcome of the continuation stage: either a kept continuation with
/// sufficient context, or the insufficient-context sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationOutcome {
    pub continuation: String,
    pub has_context: bool,
}

impl ContinuationOutcome {
    fn insufficient() -> Self {
        Self {
            continuation: INSUFFICIENT_CONTEXT_TEXT.to_string(),
            has_context: false,
        }
    }
}

/// Generates a continuation for a non-toxic prompt.
///
/// Candidates come from the regenerate-until-non-toxic loop; `None` means
/// every candidate was toxic and the record is discarded. A surviving
/// candidate counts as context-sufficient when the prompt is at least
/// `min_prompt_tokens` long, its similarity to the prompt reaches
/// `sim_floor`, and its perplexity does not exceed `ppl_ceiling`; otherwise
/// the continuation is replaced by the insufficient-context sentinel.
pub fn continue_text(
    prompt: &str,
    generator: &dyn Generator,
    toxicity: &dyn ToxicityOracle,
    similarity: &dyn SimilarityOracle,
    perplexity: &dyn PerplexityOracle,
    tokenizer: &dyn Tokenizer,
    config: &PipelineConfig,
) -> Result<Option<ContinuationOutcome>, PipelineError> {
    let prompt_score = toxicity
        .score(prompt)
        .map_err(|source| PipelineError::Oracle {
            stage: "toxicity scoring",
            attempts: 1,
            source,
        })?;
    if prompt_score >= TOXIC_THRESHOLD {
        return Err(PipelineError::Precondition(format!(
            "continuation requires a non-toxic prompt (scored {prompt_score:.3})"
        )));
    }

    if tokenizer.count(prompt) < config.min_prompt_tokens {
        return Ok(Some(ContinuationOutcome::insufficient()));
    }

    let sampling = config.sampling.single();
    let candidate = iterative_generate(
        || {
            generator
                .generate(prompt, &sampling)
                .map(|mut texts| texts.remove(0))
        },
        toxicity,
        config.max_attempts,
    )?;
    let Some(candidate) = candidate else {
        return Ok(None);
    };

    let sim = similarity
        .sim(prompt, &candidate)
        .map_err(|source| PipelineError::Oracle {
            stage: "similarity scoring",
            attempts: 1,
            source,
        })?;
    let ppl = perplexity
        .ppl(&candidate)
        .map_err(|source| PipelineError::Oracle {
            stage: "perplexity scoring",
            attempts: 1,
            source,
        })?;
    if sim >= config.sim_floor && ppl <= config.ppl_ceiling {
        Ok(Some(ContinuationOutcome {
            continuation: candidate,
            has_context: true,
        }))
    } else {
        Ok(Some(ContinuationOutcome::insufficient()))
    }
}

/// Keeps texts whose token count lies in `[min, max]`; both boundaries are
/// inclusive since only strictly longer or shorter texts are rejected.
pub fn filter_length(text: &str, tokenizer: &dyn Tokenizer, min: usize, max: usize) -> bool {
    let count = tokenizer.count(text);
    count >= min && count <= max
}
