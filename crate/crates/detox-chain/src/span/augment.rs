//! Data augmentation: random insertion of known-toxic spans into training
//! samples, with labels recomputed consistently.

use rand::Rng;

use super::loss::{AlphaPolicy, SpanTrainingSample};
use super::tokenize::Tokenizer;
use super::SpanError;

/// A bank entry: a span of text with a known toxicity score.
#[derive(Debug, Clone, PartialEq)]
pub struct BankSpan {
    pub text: String,
    pub toxicity: f64,
}

impl BankSpan {
    pub fn new(text: impl Into<String>, toxicity: f64) -> Self {
        Self {
            text: text.into(),
            toxicity,
        }
    }
}

/// A non-empty collection of toxic spans to draw from.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanBank {
    spans: Vec<BankSpan>,
}

impl SpanBank {
    pub fn new(spans: Vec<BankSpan>) -> Result<Self, SpanError> {
        for span in &spans {
            if !(0.0..=1.0).contains(&span.toxicity) {
                return Err(SpanError::ShapeMismatch(format!(
                    "bank span `{}` has toxicity {} outside [0, 1]",
                    span.text, span.toxicity
                )));
            }
        }
        Ok(Self { spans })
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

/// With probability `rate`, inserts one bank span at a random token boundary
/// and recomputes the segmentation-aligned labels.
///
/// Labeling rule: every token carries a toxicity attribution — original
/// tokens keep their old span's label, inserted tokens take the bank span's
/// toxicity — and each new span's label is the maximum attribution over its
/// tokens. Any toxic token therefore taints its span. The global label
/// becomes the maximum of the old label and the inserted toxicity.
pub fn augment_with_toxic_spans(
    sample: &SpanTrainingSample,
    bank: &SpanBank,
    rate: f64,
    rng: &mut impl Rng,
    tokenizer: &dyn Tokenizer,
    k: usize,
    policy: &AlphaPolicy,
) -> Result<SpanTrainingSample, SpanError> {
    if rate <= 0.0 || rng.gen::<f64>() >= rate {
        return Ok(sample.clone());
    }
    if bank.is_empty() {
        return Err(SpanError::ShapeMismatch(
            "augmentation requires a non-empty span bank".into(),
        ));
    }

    let tokens = tokenizer.tokenize(&sample.text);
    if tokens.is_empty() {
        return Err(SpanError::EmptyInput);
    }
    let n = tokens.len().div_ceil(k);
    if sample.span_labels.len() != n {
        return Err(SpanError::ShapeMismatch(format!(
            "{} span labels for {} spans",
            sample.span_labels.len(),
            n
        )));
    }

    let bank_span = &bank.spans[rng.gen_range(0..bank.len())];
    let inserted = tokenizer.tokenize(&bank_span.text);
    let position = rng.gen_range(0..=tokens.len());

    // Per-token attribution under the new token order.
    let mut new_tokens = Vec::with_capacity(tokens.len() + inserted.len());
    let mut attribution = Vec::with_capacity(tokens.len() + inserted.len());
    for (i, token) in tokens.iter().enumerate() {
        if i == position {
            for ins in &inserted {
                new_tokens.push(ins.clone());
                attribution.push(bank_span.toxicity);
            }
        }
        new_tokens.push(token.clone());
        attribution.push(sample.span_labels[i / k]);
    }
    if position == tokens.len() {
        for ins in &inserted {
            new_tokens.push(ins.clone());
            attribution.push(bank_span.toxicity);
        }
    }

    let new_n = new_tokens.len().div_ceil(k);
    let mut span_labels = Vec::with_capacity(new_n);
    for j in 0..new_n {
        let start = j * k;
        let end = (start + k).min(new_tokens.len());
        let label = attribution[start..end]
            .iter()
            .fold(0.0f64, |acc, &a| acc.max(a));
        span_labels.push(label);
    }

    Ok(SpanTrainingSample::from_labels(
        tokenizer.detokenize(&new_tokens),
        sample.global_label.max(bank_span.toxicity),
        span_labels,
        policy,
    ))
}
