//! Perplexity-based choice classification and the in-context exemplar
//! prompt format.

use serde::{Deserialize, Serialize};

use crate::oracles::PerplexityOracle;

use super::EvalError;

/// Picks the choice whose appended form has the lowest perplexity. Ties
/// break toward the lowest index.
pub fn ppl_choice_classify(
    text: &str,
    choices: &[&str],
    perplexity: &dyn PerplexityOracle,
) -> Result<usize, EvalError> {
    if choices.len() < 2 {
        return Err(EvalError::Precondition(format!(
            "choice classification needs at least 2 choices, got {}",
            choices.len()
        )));
    }
    let mut best = 0usize;
    let mut best_ppl = f64::INFINITY;
    for (i, choice) in choices.iter().enumerate() {
        let ppl = perplexity.ppl(&format!("{text} {choice}"))?;
        if ppl < best_ppl {
            best = i;
            best_ppl = ppl;
        }
    }
    Ok(best)
}

/// Toxicity choice labels as they appear in the exemplar blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChoiceLabel {
    /// Non-toxic.
    Good,
    /// Toxic.
    Bad,
}

impl ChoiceLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ChoiceLabel::Good => "good",
            ChoiceLabel::Bad => "bad",
        }
    }
}

/// One labeled in-context exemplar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub text: String,
    pub label: ChoiceLabel,
}

impl Exemplar {
    pub fn new(text: impl Into<String>, label: ChoiceLabel) -> Self {
        Self {
            text: text.into(),
            label,
        }
    }
}

/// Concatenates `##text: {t} ##label: {l}\n` blocks in the given order,
/// followed by the query block `##text: {query} ##label:` left open for the
/// model to complete.
pub fn build_incontext_prompt(exemplars: &[Exemplar], query: &str) -> String {
    let mut out = String::new();
    for exemplar in exemplars {
        out.push_str("##text: ");
        out.push_str(&exemplar.text);
        out.push_str(" ##label: ");
        out.push_str(exemplar.label.as_str());
        out.push('\n');
    }
    out.push_str("##text: ");
    out.push_str(query);
    out.push_str(" ##label:");
    out
}
