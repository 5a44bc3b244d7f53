//! Reasoning templates for the four chain branches.
//!
//! Each branch is a fixed sequence of literal marker text and named slots,
//! joined by the `###` delimiter. Rendering concatenates the segments
//! verbatim; parsing inverts them. The with-continuation branches carry a
//! trailing delimiter (with a leading space in the toxic branch and none in
//! the non-toxic branch); the no-continuation branches end on the closing
//! marker sentence. The codec reproduces these asymmetries byte-exactly.

use super::ChainBranch;

/// Marker phrases shared by all templates, without surrounding delimiters.
pub mod markers {
    pub const STEP_INTRO: &str = "Let's detoxify step by step.";
    pub const VERDICT_TOXIC: &str = "The text is toxic.";
    pub const VERDICT_NON_TOXIC: &str = "The text is non-toxic.";
    pub const MASK_INTRO: &str = "Mask the toxic portion of the text:";
    pub const CONTEXT_YES_TOXIC: &str = "The rephrased prompt has enough context.";
    pub const CONTEXT_NO_TOXIC: &str =
        "The rephrased prompt does not have enough context, so there is no need to generate a continuation.";
    pub const CONTEXT_YES_NON_TOXIC: &str = "It has enough context.";
    pub const CONTEXT_NO_NON_TOXIC: &str =
        "The prompt does not have enough context, so there is no need to generate a continuation.";
    pub const CONTINUATION_INTRO: &str = "The Continuation is:";

    /// The fulfilling marker names the placeholder literal, so it depends on
    /// the configured placeholder.
    pub fn fulfill_intro(placeholder: &str) -> String {
        format!(
            "Find one or several non-toxic and appropriate tokens to replace {placeholder} \
             and the masked text can be rephrased into a non-toxic version:"
        )
    }
}

/// The named slots a template can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Prompt,
    MaskedPrompt,
    RephrasedPrompt,
    Generation,
}

impl Slot {
    pub fn name(self) -> &'static str {
        match self {
            Slot::Prompt => "Prompt",
            Slot::MaskedPrompt => "Masked Prompt",
            Slot::RephrasedPrompt => "Rephrased Prompt",
            Slot::Generation => "Generation",
        }
    }
}

/// One template piece: either literal text or a slot to substitute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Literal(String),
    Slot(Slot),
}

/// The delimiter, placeholder, and the four branch templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    delimiter: String,
    placeholder: String,
    toxic_with_cont: Vec<Segment>,
    toxic_no_cont: Vec<Segment>,
    non_toxic_with_cont: Vec<Segment>,
    non_toxic_no_cont: Vec<Segment>,
}

pub const DEFAULT_DELIMITER: &str = "###";
pub const DEFAULT_PLACEHOLDER: &str = "<MASK>";

impl Default for TemplateSet {
    fn default() -> Self {
        Self::new(DEFAULT_DELIMITER, DEFAULT_PLACEHOLDER)
    }
}

impl TemplateSet {
    pub fn new(delimiter: impl Into<String>, placeholder: impl Into<String>) -> Self {
        let delimiter = delimiter.into();
        let placeholder = placeholder.into();
        let d = delimiter.as_str();
        let fulfill = markers::fulfill_intro(&placeholder);

        // Toxic branches share the detection/masking/fulfilling prefix.
        let toxic_prefix = |out: &mut Vec<Segment>| {
            out.push(Segment::Literal(d.to_string()));
            out.push(Segment::Slot(Slot::Prompt));
            out.push(Segment::Literal(format!(
                " {d}{} {d}{} {d}{} {d}",
                markers::STEP_INTRO,
                markers::VERDICT_TOXIC,
                markers::MASK_INTRO
            )));
            out.push(Segment::Slot(Slot::MaskedPrompt));
            out.push(Segment::Literal(format!(" {d}{fulfill} {d}")));
            out.push(Segment::Slot(Slot::RephrasedPrompt));
        };

        let mut toxic_with_cont = Vec::new();
        toxic_prefix(&mut toxic_with_cont);
        toxic_with_cont.push(Segment::Literal(format!(
            " {d}{} {d}{} {d}",
            markers::CONTEXT_YES_TOXIC,
            markers::CONTINUATION_INTRO
        )));
        toxic_with_cont.push(Segment::Slot(Slot::Generation));
        toxic_with_cont.push(Segment::Literal(format!(" {d}")));

        let mut toxic_no_cont = Vec::new();
        toxic_prefix(&mut toxic_no_cont);
        toxic_no_cont.push(Segment::Literal(format!(
            " {d}{}",
            markers::CONTEXT_NO_TOXIC
        )));

        let non_toxic_with_cont = vec![
            Segment::Literal(d.to_string()),
            Segment::Slot(Slot::Prompt),
            Segment::Literal(format!(
                " {d}{} {d}{} {d}{} {d}{} {d}",
                markers::STEP_INTRO,
                markers::VERDICT_NON_TOXIC,
                markers::CONTEXT_YES_NON_TOXIC,
                markers::CONTINUATION_INTRO
            )),
            Segment::Slot(Slot::Generation),
            Segment::Literal(d.to_string()),
        ];

        let non_toxic_no_cont = vec![
            Segment::Literal(d.to_string()),
            Segment::Slot(Slot::Prompt),
            Segment::Literal(format!(
                " {d}{} {d}{} {d}{}",
                markers::STEP_INTRO,
                markers::VERDICT_NON_TOXIC,
                markers::CONTEXT_NO_NON_TOXIC
            )),
        ];

        Self {
            delimiter,
            placeholder,
            toxic_with_cont,
            toxic_no_cont,
            non_toxic_with_cont,
            non_toxic_no_cont,
        }
    }

    pub fn delimiter(&self) -> &str {
        &self.delimiter
    }

    pub fn placeholder(&self) -> &str {
        &self.placeholder
    }

    pub fn segments(&self, branch: ChainBranch) -> &[Segment] {
        match branch {
            ChainBranch::ToxicWithCont => &self.toxic_with_cont,
            ChainBranch::ToxicNoCont => &self.toxic_no_cont,
            ChainBranch::NonToxicWithCont => &self.non_toxic_with_cont,
            ChainBranch::NonToxicNoCont => &self.non_toxic_no_cont,
        }
    }

    /// The fulfilling marker rendered with this set's placeholder.
    pub fn fulfill_marker(&self) -> String {
        markers::fulfill_intro(&self.placeholder)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn each_template_has_unique_slots() {
        let set = TemplateSet::default();
        for branch in ChainBranch::ALL {
            let mut seen = std::collections::HashSet::new();
            for segment in set.segments(branch) {
                if let Segment::Slot(slot) = segment {
                    assert!(seen.insert(*slot), "{branch}: duplicate slot {slot:?}");
                }
            }
        }
    }

    #[test]
    fn branch_markers_appear_in_order() {
        let set = TemplateSet::default();
        let literal_text = |branch| {
            set.segments(branch)
                .iter()
                .filter_map(|s| match s {
                    Segment::Literal(text) => Some(text.as_str()),
                    Segment::Slot(_) => None,
                })
                .collect::<String>()
        };
        let toxic = literal_text(ChainBranch::ToxicWithCont);
        let intro = toxic.find(markers::STEP_INTRO).unwrap();
        let verdict = toxic.find(markers::VERDICT_TOXIC).unwrap();
        let mask = toxic.find(markers::MASK_INTRO).unwrap();
        let cont = toxic.find(markers::CONTINUATION_INTRO).unwrap();
        assert!(intro < verdict && verdict < mask && mask < cont);

        let non_toxic = literal_text(ChainBranch::NonToxicNoCont);
        assert!(non_toxic.contains(markers::VERDICT_NON_TOXIC));
        assert!(non_toxic.contains(markers::CONTEXT_NO_NON_TOXIC));
    }

    #[test]
    fn custom_placeholder_flows_into_fulfill_marker() {
        let set = TemplateSet::new("###", "[MASK]");
        assert!(set.fulfill_marker().contains("replace [MASK] and"));
    }
}
