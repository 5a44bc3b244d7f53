//! Rendering records into chain text.

use super::template::{Segment, Slot, TemplateSet};
use super::{ChainError, DetoxChainRecord, Violation};

/// Renders a record as the branch template with slots substituted verbatim.
///
/// No case folding or whitespace normalization is applied. Records that do
/// not satisfy their branch invariants are rejected, as is slot text that
/// contains the delimiter (the format has no escaping).
pub fn render_chain(
    record: &DetoxChainRecord,
    templates: &TemplateSet,
) -> Result<String, ChainError> {
    let mut out = String::new();
    for segment in templates.segments(record.branch) {
        match segment {
            Segment::Literal(text) => out.push_str(text),
            Segment::Slot(slot) => {
                let value = slot_value(record, *slot)?;
                if value.contains(templates.delimiter()) {
                    return Err(ChainError::DelimiterInSlot {
                        slot: slot.name().to_string(),
                        delimiter: templates.delimiter().to_string(),
                    });
                }
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

fn slot_value(record: &DetoxChainRecord, slot: Slot) -> Result<&str, ChainError> {
    let missing = |field: &str| {
        ChainError::InvalidRecord(Violation {
            field: field.to_string(),
            rule: format!("required by branch {}", record.branch),
        })
    };
    match slot {
        Slot::Prompt => Ok(record.prompt.as_str()),
        Slot::MaskedPrompt => record
            .masked_prompt
            .as_deref()
            .ok_or_else(|| missing("masked_prompt")),
        Slot::RephrasedPrompt => record
            .rephrased_prompt
            .as_deref()
            .ok_or_else(|| missing("rephrased_prompt")),
        Slot::Generation => record
            .continuation
            .as_deref()
            .ok_or_else(|| missing("continuation")),
    }
}
