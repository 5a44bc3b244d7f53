//! Chain codec: byte-exact rendering of structured detox chain records into
//! the four-branch reasoning-template text, and strict/lenient parsing of
//! chain text back into records.

mod parse;
mod render;
mod template;

pub use parse::{parse_chain, ChainParseResult, Diagnostic, ParseMode};
pub use render::render_chain;
pub use template::{markers, Segment, Slot, TemplateSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The four chain shapes, determined by (toxic?, has-context?).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainBranch {
    ToxicWithCont,
    ToxicNoCont,
    NonToxicWithCont,
    NonToxicNoCont,
}

impl ChainBranch {
    /// The branch is a total function of the two verdicts.
    pub fn from_flags(is_toxic: bool, has_context: bool) -> Self {
        match (is_toxic, has_context) {
            (true, true) => ChainBranch::ToxicWithCont,
            (true, false) => ChainBranch::ToxicNoCont,
            (false, true) => ChainBranch::NonToxicWithCont,
            (false, false) => ChainBranch::NonToxicNoCont,
        }
    }

    pub fn is_toxic(self) -> bool {
        matches!(self, ChainBranch::ToxicWithCont | ChainBranch::ToxicNoCont)
    }

    pub fn has_context(self) -> bool {
        matches!(
            self,
            ChainBranch::ToxicWithCont | ChainBranch::NonToxicWithCont
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChainBranch::ToxicWithCont => "toxic_with_cont",
            ChainBranch::ToxicNoCont => "toxic_no_cont",
            ChainBranch::NonToxicWithCont => "non_toxic_with_cont",
            ChainBranch::NonToxicNoCont => "non_toxic_no_cont",
        }
    }

    pub const ALL: [ChainBranch; 4] = [
        ChainBranch::ToxicWithCont,
        ChainBranch::ToxicNoCont,
        ChainBranch::NonToxicWithCont,
        ChainBranch::NonToxicNoCont,
    ];
}

impl std::fmt::Display for ChainBranch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The structured five-step chain: detection verdict, masked prompt,
/// rephrased prompt, context verdict, continuation.
///
/// Invariants: `masked_prompt` and `rephrased_prompt` are present iff
/// `is_toxic`; `continuation` is present iff `has_context`; `branch` is
/// determined by the two flags. [`validate_record`] checks all of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetoxChainRecord {
    pub id: String,
    pub prompt: String,
    pub is_toxic: bool,
    pub masked_prompt: Option<String>,
    pub rephrased_prompt: Option<String>,
    pub has_context: bool,
    pub continuation: Option<String>,
    pub branch: ChainBranch,
}

impl DetoxChainRecord {
    pub fn non_toxic_with_cont(
        id: impl Into<String>,
        prompt: impl Into<String>,
        continuation: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            is_toxic: false,
            masked_prompt: None,
            rephrased_prompt: None,
            has_context: true,
            continuation: Some(continuation.into()),
            branch: ChainBranch::NonToxicWithCont,
        }
    }

    pub fn non_toxic_no_cont(id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            is_toxic: false,
            masked_prompt: None,
            rephrased_prompt: None,
            has_context: false,
            continuation: None,
            branch: ChainBranch::NonToxicNoCont,
        }
    }

    pub fn toxic_with_cont(
        id: impl Into<String>,
        prompt: impl Into<String>,
        masked: impl Into<String>,
        rephrased: impl Into<String>,
        continuation: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            is_toxic: true,
            masked_prompt: Some(masked.into()),
            rephrased_prompt: Some(rephrased.into()),
            has_context: true,
            continuation: Some(continuation.into()),
            branch: ChainBranch::ToxicWithCont,
        }
    }

    pub fn toxic_no_cont(
        id: impl Into<String>,
        prompt: impl Into<String>,
        masked: impl Into<String>,
        rephrased: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            is_toxic: true,
            masked_prompt: Some(masked.into()),
            rephrased_prompt: Some(rephrased.into()),
            has_context: false,
            continuation: None,
            branch: ChainBranch::ToxicNoCont,
        }
    }
}

/// One broken record invariant: which field and which rule it violates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Returns every invariant violation of the record; empty means valid.
pub fn validate_record(record: &DetoxChainRecord) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut check = |ok: bool, field: &str, rule: &str| {
        if !ok {
            violations.push(Violation {
                field: field.to_string(),
                rule: rule.to_string(),
            });
        }
    };

    if record.is_toxic {
        check(
            record.masked_prompt.is_some(),
            "masked_prompt",
            "missing on toxic record",
        );
        check(
            record.rephrased_prompt.is_some(),
            "rephrased_prompt",
            "missing on toxic record",
        );
    } else {
        check(
            record.masked_prompt.is_none(),
            "masked_prompt",
            "present on non-toxic record",
        );
        check(
            record.rephrased_prompt.is_none(),
            "rephrased_prompt",
            "present on non-toxic record",
        );
    }
    if record.has_context {
        check(
            record.continuation.is_some(),
            "continuation",
            "missing on has-context record",
        );
    } else {
        check(
            record.continuation.is_none(),
            "continuation",
            "present on no-context record",
        );
    }
    check(
        record.branch == ChainBranch::from_flags(record.is_toxic, record.has_context),
        "branch",
        "inconsistent with (is_toxic, has_context)",
    );
    violations
}

/// Errors raised by the codec.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    /// A record that does not satisfy its branch invariants; names the
    /// offending field.
    #[error("invalid record: {0}")]
    InvalidRecord(Violation),
    /// Slot text containing the delimiter cannot be rendered unambiguously.
    #[error("slot `{slot}` contains the delimiter `{delimiter}`")]
    DelimiterInSlot { slot: String, delimiter: String },
    /// Strict parse failure, naming the first missing or mismatched marker.
    #[error("parse error at byte {position}: expected `{expected}`, found `{found}`")]
    Parse {
        position: usize,
        expected: String,
        found: String,
    },
}

/// On-disk chain corpus row: the record fields plus the rendered chain text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainCorpusRow {
    pub id: String,
    pub branch: ChainBranch,
    pub prompt: String,
    pub is_toxic: bool,
    pub masked_prompt: Option<String>,
    pub rephrased_prompt: Option<String>,
    pub has_context: bool,
    pub continuation: Option<String>,
    pub chain_text: String,
}

impl ChainCorpusRow {
    /// Renders the record and packages it for JSON-lines persistence.
    pub fn from_record(
        record: &DetoxChainRecord,
        templates: &TemplateSet,
    ) -> Result<Self, ChainError> {
        let chain_text = render_chain(record, templates)?;
        Ok(Self {
            id: record.id.clone(),
            branch: record.branch,
            prompt: record.prompt.clone(),
            is_toxic: record.is_toxic,
            masked_prompt: record.masked_prompt.clone(),
            rephrased_prompt: record.rephrased_prompt.clone(),
            has_context: record.has_context,
            continuation: record.continuation.clone(),
            chain_text,
        })
    }

    pub fn into_record(self) -> DetoxChainRecord {
        DetoxChainRecord {
            id: self.id,
            prompt: self.prompt,
            is_toxic: self.is_toxic,
            masked_prompt: self.masked_prompt,
            rephrased_prompt: self.rephrased_prompt,
            has_context: self.has_context,
            continuation: self.continuation,
            branch: self.branch,
        }
    }
}
