//! The designed-prompt construction path: drive an instruction-following
//! completion API through the four sub-steps sequentially and assemble
//! records identically to the local path.

use crate::chain::{validate_record, ChainBranch, ChainCorpusRow, DetoxChainRecord};
use crate::oracles::{ChatCompleter, ToxicityOracle, TOXIC_THRESHOLD};
use crate::record::PromptRecord;
use crate::span::WhitespaceTokenizer;

use super::generate::filter_length;
use super::run::{PipelineRun, RecordFailure, RunReport};
use super::{
    DiscardStage, PipelineConfig, PipelineError, LENGTH_FILTER_MAX_TOKENS, LENGTH_FILTER_MIN_TOKENS,
};

pub const PROMPT_TOXIC_DETECTION: &str = "Judge if the given text contains toxicity.";
pub const PROMPT_SPAN_MASKING: &str = "Find and mask the toxic portions of the given text with \
                                       \"[MASK]\" token, and return the masked text without any \
                                       extra context or explanation.";
pub const PROMPT_SPAN_FULFILLING: &str = "Replace \"[MASK]\" token with suitable tokens to make \
                                          the recovered prompt friendly and non-toxic.";
pub const PROMPT_CONTEXT_JUDGEMENT: &str = "Judge whether the prompt has sufficient context \
                                            information for continual generation. Return the \
                                            continuation if it has sufficient context, else \
                                            return \"no\" with an explanation.";

/// The mask token the API is instructed to use; normalized to the configured
/// placeholder when assembling records.
pub const API_MASK_TOKEN: &str = "[MASK]";

enum StepResult<T> {
    Ok(T),
    Discard(DiscardStage, String),
}

struct ApiCtx<'a> {
    chat: &'a dyn ChatCompleter,
    toxicity: &'a dyn ToxicityOracle,
    config: &'a PipelineConfig,
    chat_calls: u64,
    toxicity_calls: u64,
}

impl ApiCtx<'_> {
    fn ask(&mut self, instruction: &str, input: &str) -> Result<String, PipelineError> {
        self.chat_calls += 1;
        self.chat
            .complete(instruction, input)
            .map_err(|source| PipelineError::Oracle {
                stage: "chat completion",
                attempts: 1,
                source,
            })
    }

    fn score(&mut self, text: &str) -> Result<f64, PipelineError> {
        self.toxicity_calls += 1;
        self.toxicity
            .score(text)
            .map_err(|source| PipelineError::Oracle {
                stage: "toxicity scoring",
                attempts: 1,
                source,
            })
    }

    /// Asks once and retries once on an unparseable answer, then gives up.
    fn ask_parsed<T>(
        &mut self,
        instruction: &str,
        input: &str,
        stage: DiscardStage,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<StepResult<T>, PipelineError> {
        for _ in 0..2 {
            let answer = self.ask(instruction, input)?;
            if let Some(value) = parse(&answer) {
                return Ok(StepResult::Ok(value));
            }
            log::debug!("unparseable answer at {stage}: {answer:?}");
        }
        Ok(StepResult::Discard(
            stage,
            "answer unparseable after one retry".to_string(),
        ))
    }
}

/// Case-insensitive toxicity verdict: accepts `toxic`/`yes` and
/// `non-toxic`/`no` prefixes.
fn parse_verdict(answer: &str) -> Option<bool> {
    let t = answer.trim().to_lowercase();
    if t.starts_with("non-toxic") {
        Some(false)
    } else if t.starts_with("toxic") || t.starts_with("yes") {
        Some(true)
    } else if first_word_is_no(&t) {
        Some(false)
    } else {
        None
    }
}

/// True when the first alphabetic word is exactly "no", so a continuation
/// that merely starts with "not" or "november" is not mistaken for the
/// no-context verdict.
fn first_word_is_no(lowercased: &str) -> bool {
    let word: String = lowercased
        .trim_start()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect();
    word == "no"
}

fn parse_masked(answer: &str) -> Option<String> {
    let trimmed = answer.trim();
    trimmed
        .contains(API_MASK_TOKEN)
        .then(|| trimmed.to_string())
}

fn parse_nonempty(answer: &str) -> Option<String> {
    let trimmed = answer.trim();
    (!trimmed.is_empty()).then(|| trimmed.to_string())
}

enum Judgment {
    No,
    Continuation(String),
}

/// Runs the four designed prompts for one input and assembles the record.
fn build_api_record(
    ctx: &mut ApiCtx<'_>,
    prompt: &PromptRecord,
) -> Result<StepResult<DetoxChainRecord>, PipelineError> {
    use StepResult::{Discard, Ok as StepOk};

    // 1. Toxic detection.
    let is_toxic = match ctx.ask_parsed(
        PROMPT_TOXIC_DETECTION,
        &prompt.text,
        DiscardStage::ApiDetectionParse,
        parse_verdict,
    )? {
        StepOk(v) => v,
        Discard(stage, reason) => return Ok(Discard(stage, reason)),
    };

    // 2 + 3. Span masking and fulfilling for toxic prompts.
    let mut masked_prompt = None;
    let mut rephrased_prompt = None;
    let continuation_input = if is_toxic {
        let masked_raw = match ctx.ask_parsed(
            PROMPT_SPAN_MASKING,
            &prompt.text,
            DiscardStage::ApiMaskingParse,
            parse_masked,
        )? {
            StepOk(m) => m,
            Discard(stage, reason) => return Ok(Discard(stage, reason)),
        };
        masked_prompt = Some(masked_raw.replace(API_MASK_TOKEN, &ctx.config.placeholder));

        let mut rephrased = None;
        for _ in 0..ctx.config.max_attempts {
            let answer = ctx.ask(PROMPT_SPAN_FULFILLING, &masked_raw)?;
            let answer = answer.trim().to_string();
            if answer.is_empty()
                || answer.contains(API_MASK_TOKEN)
                || answer.contains(&ctx.config.placeholder)
            {
                continue; // malformed fill, counts as a failed attempt
            }
            if ctx.score(&answer)? < TOXIC_THRESHOLD {
                rephrased = Some(answer);
                break;
            }
        }
        let Some(rephrased) = rephrased else {
            return Ok(Discard(
                DiscardStage::Fulfilling,
                format!("no non-toxic fill in {} attempts", ctx.config.max_attempts),
            ));
        };
        rephrased_prompt = Some(rephrased.clone());
        rephrased
    } else {
        prompt.text.clone()
    };

    // 4. Context judgment and continuation, with length-filter regeneration.
    let mut judgment = None;
    let mut parse_retry_left = 1;
    let mut attempts = 0;
    while attempts < ctx.config.max_attempts {
        attempts += 1;
        let answer = ctx.ask(PROMPT_CONTEXT_JUDGEMENT, &continuation_input)?;
        let Some(answer) = parse_nonempty(&answer) else {
            if parse_retry_left > 0 {
                parse_retry_left -= 1;
                attempts -= 1; // parse retries have their own budget of one
                continue;
            }
            return Ok(Discard(
                DiscardStage::ApiJudgmentParse,
                "empty judgment answer after one retry".to_string(),
            ));
        };
        if first_word_is_no(&answer.to_lowercase()) {
            judgment = Some(Judgment::No);
            break;
        }
        if ctx.score(&answer)? >= TOXIC_THRESHOLD {
            continue;
        }
        if !filter_length(
            &answer,
            &WhitespaceTokenizer,
            LENGTH_FILTER_MIN_TOKENS,
            LENGTH_FILTER_MAX_TOKENS,
        ) {
            log::debug!("continuation failed the length filter, regenerating");
            continue;
        }
        judgment = Some(Judgment::Continuation(answer));
        break;
    }

    let Some(judgment) = judgment else {
        return Ok(Discard(
            DiscardStage::Continuation,
            format!(
                "no acceptable continuation in {} attempts",
                ctx.config.max_attempts
            ),
        ));
    };

    let (has_context, continuation) = match judgment {
        Judgment::No => (false, None),
        Judgment::Continuation(text) => (true, Some(text)),
    };
    let record = DetoxChainRecord {
        id: prompt.id.clone(),
        prompt: prompt.text.clone(),
        is_toxic,
        masked_prompt,
        rephrased_prompt,
        has_context,
        continuation,
        branch: ChainBranch::from_flags(is_toxic, has_context),
    };
    debug_assert!(validate_record(&record).is_empty());
    Ok(StepOk(record))
}

/// Builds a chain corpus by driving a completion API through the designed
/// prompts, one prompt at a time, normalizing the API mask token to the
/// configured placeholder and filtering generated continuations to the
/// 20..=128 token window with regeneration.
pub fn run_api_pipeline(
    prompts: &[PromptRecord],
    chat: &dyn ChatCompleter,
    toxicity: &dyn ToxicityOracle,
    config: &PipelineConfig,
) -> Result<PipelineRun, PipelineError> {
    config.validate()?;
    let templates = config.templates();
    let mut report = RunReport::new(config);
    let mut rows = Vec::new();
    let mut ctx = ApiCtx {
        chat,
        toxicity,
        config,
        chat_calls: 0,
        toxicity_calls: 0,
    };

    let mut abort: Option<String> = None;
    for prompt in prompts {
        report.records_in += 1;
        match build_api_record(&mut ctx, prompt) {
            Ok(StepResult::Ok(record)) => {
                report.count_branch(record.branch);
                report.records_out += 1;
                rows.push(ChainCorpusRow::from_record(&record, &templates)?);
            }
            Ok(StepResult::Discard(stage, reason)) => {
                log::info!("discarded `{}` at {stage}: {reason}", prompt.id);
                report.count_discard(stage);
            }
            Err(err) if super::run::is_systemic(&err) => {
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

    report.oracle_calls.insert("chat".into(), ctx.chat_calls);
    report
        .oracle_calls
        .insert("toxicity".into(), ctx.toxicity_calls);

    if let Some(message) = abort {
        report.partial = true;
        return Err(PipelineError::Aborted {
            partial: Box::new(PipelineRun { rows, report }),
            message,
        });
    }
    Ok(PipelineRun { rows, report })
}
