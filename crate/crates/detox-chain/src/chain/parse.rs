//! Parsing chain text back into structured records.
//!
//! Strict mode requires the text to match one branch template exactly and is
//! the inverse of rendering. Lenient mode scans for marker phrases
//! left-to-right, recovers whatever steps it can, and reports diagnostics
//! instead of failing; it is meant for grading imperfect model outputs.

use serde::{Deserialize, Serialize};

use super::template::{markers, Segment, TemplateSet};
use super::{ChainBranch, ChainError, DetoxChainRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    Strict,
    Lenient,
}

/// Where a parse deviated from the expected template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Byte offset into the input text.
    pub position: usize,
    /// The marker or structure that was expected.
    pub expected: String,
    /// What was found instead.
    pub found: String,
}

/// Outcome of parsing one chain text.
///
/// `complete` is true only when a record was recovered with zero
/// diagnostics. Chain text does not encode a record id, so recovered
/// records carry an empty id; callers re-attach their own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainParseResult {
    pub record: Option<DetoxChainRecord>,
    pub diagnostics: Vec<Diagnostic>,
    pub complete: bool,
}

/// Parses chain text.
///
/// Strict mode returns an error naming the first missing or mismatched
/// marker; lenient mode never errors.
pub fn parse_chain(
    text: &str,
    templates: &TemplateSet,
    mode: ParseMode,
) -> Result<ChainParseResult, ChainError> {
    match mode {
        ParseMode::Strict => parse_strict(text, templates),
        ParseMode::Lenient => Ok(parse_lenient(text, templates)),
    }
}

// ---------------------------------------------------------------------------
// Strict mode
// ---------------------------------------------------------------------------

struct Mismatch {
    position: usize,
    expected: String,
}

fn parse_strict(text: &str, templates: &TemplateSet) -> Result<ChainParseResult, ChainError> {
    let mut furthest: Option<Mismatch> = None;
    for branch in ChainBranch::ALL {
        match match_template(text, templates.segments(branch), templates.delimiter()) {
            Ok(slots) => {
                let record = record_from_slots(branch, &slots);
                return Ok(ChainParseResult {
                    record: Some(record),
                    diagnostics: Vec::new(),
                    complete: true,
                });
            }
            Err(mismatch) => {
                if furthest
                    .as_ref()
                    .map(|f| mismatch.position > f.position)
                    .unwrap_or(true)
                {
                    furthest = Some(mismatch);
                }
            }
        }
    }
    let mismatch = furthest.expect("at least one branch attempted");
    Err(ChainError::Parse {
        position: mismatch.position,
        expected: mismatch.expected,
        found: snippet(&text[mismatch.position.min(text.len())..]),
    })
}

fn snippet(rest: &str) -> String {
    let mut end = rest.len().min(40);
    while !rest.is_char_boundary(end) {
        end -= 1;
    }
    if end == rest.len() {
        rest.to_string()
    } else {
        format!("{}…", &rest[..end])
    }
}

type SlotValues = Vec<(super::template::Slot, String)>;

/// Matches segments against `text`, requiring full consumption. Slot capture
/// backtracks over occurrences of the following literal so that slot content
/// abutting the delimiter still round-trips.
fn match_template(
    text: &str,
    segments: &[Segment],
    delimiter: &str,
) -> Result<SlotValues, Mismatch> {
    let mut slots = Vec::new();
    let mut best = Mismatch {
        position: 0,
        expected: String::new(),
    };
    if match_from(text, 0, segments, delimiter, &mut slots, &mut best) {
        Ok(slots)
    } else {
        Err(best)
    }
}

fn match_from(
    text: &str,
    pos: usize,
    segments: &[Segment],
    delimiter: &str,
    slots: &mut SlotValues,
    best: &mut Mismatch,
) -> bool {
    let Some(segment) = segments.first() else {
        if pos == text.len() {
            return true;
        }
        note_mismatch(best, pos, "end of text");
        return false;
    };
    match segment {
        Segment::Literal(lit) => {
            if text[pos..].starts_with(lit.as_str()) {
                match_from(
                    text,
                    pos + lit.len(),
                    &segments[1..],
                    delimiter,
                    slots,
                    best,
                )
            } else {
                note_mismatch(best, pos, lit);
                false
            }
        }
        Segment::Slot(slot) => {
            // Templates never end on a slot; the next segment is a literal.
            let Some(Segment::Literal(next)) = segments.get(1) else {
                unreachable!("template slot without a following literal");
            };
            let rest = &text[pos..];
            let mut search = 0;
            while let Some(found) = rest[search..].find(next.as_str()) {
                let end = search + found;
                let candidate = &rest[..end];
                if candidate.contains(delimiter) {
                    // Longer captures only add more of the same; give up.
                    break;
                }
                slots.push((*slot, candidate.to_string()));
                if match_from(
                    text,
                    pos + end + next.len(),
                    &segments[2..],
                    delimiter,
                    slots,
                    best,
                ) {
                    return true;
                }
                slots.pop();
                search = end + 1;
            }
            note_mismatch(best, pos + rest.len().min(search), next);
            false
        }
    }
}

fn note_mismatch(best: &mut Mismatch, position: usize, expected: &str) {
    if position >= best.position {
        best.position = position;
        best.expected = expected.trim().to_string();
    }
}

fn record_from_slots(branch: ChainBranch, slots: &SlotValues) -> DetoxChainRecord {
    use super::template::Slot;
    let get = |wanted: Slot| {
        slots
            .iter()
            .find(|(slot, _)| *slot == wanted)
            .map(|(_, value)| value.clone())
    };
    DetoxChainRecord {
        id: String::new(),
        prompt: get(Slot::Prompt).unwrap_or_default(),
        is_toxic: branch.is_toxic(),
        masked_prompt: get(Slot::MaskedPrompt),
        rephrased_prompt: get(Slot::RephrasedPrompt),
        has_context: branch.has_context(),
        continuation: get(Slot::Generation),
        branch,
    }
}

// ---------------------------------------------------------------------------
// Lenient mode
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Marker {
    StepIntro,
    VerdictToxic,
    VerdictNonToxic,
    MaskIntro,
    FulfillIntro,
    ContextYesToxic,
    ContextNoToxic,
    ContextYesNonToxic,
    ContextNoNonToxic,
    ContinuationIntro,
}

#[derive(Debug, Clone)]
struct Hit {
    marker: Marker,
    start: usize,
    end: usize,
}

fn marker_table(templates: &TemplateSet) -> Vec<(Marker, String)> {
    vec![
        (Marker::StepIntro, markers::STEP_INTRO.to_string()),
        (Marker::VerdictToxic, markers::VERDICT_TOXIC.to_string()),
        (
            Marker::VerdictNonToxic,
            markers::VERDICT_NON_TOXIC.to_string(),
        ),
        (Marker::MaskIntro, markers::MASK_INTRO.to_string()),
        (Marker::FulfillIntro, templates.fulfill_marker()),
        (
            Marker::ContextYesToxic,
            markers::CONTEXT_YES_TOXIC.to_string(),
        ),
        (
            Marker::ContextNoToxic,
            markers::CONTEXT_NO_TOXIC.to_string(),
        ),
        (
            Marker::ContextYesNonToxic,
            markers::CONTEXT_YES_NON_TOXIC.to_string(),
        ),
        (
            Marker::ContextNoNonToxic,
            markers::CONTEXT_NO_NON_TOXIC.to_string(),
        ),
        (
            Marker::ContinuationIntro,
            markers::CONTINUATION_INTRO.to_string(),
        ),
    ]
}

/// A marker counts as a hit when it sits at the start of the text or right
/// after a delimiter (an optional single space between them is tolerated).
/// Bare phrases inside slot content are not hits.
fn scan_markers(text: &str, templates: &TemplateSet) -> Vec<Hit> {
    let delimiter = templates.delimiter();
    let mut hits = Vec::new();
    for (marker, phrase) in marker_table(templates) {
        let mut from = 0;
        while let Some(found) = text[from..].find(&phrase) {
            let start = from + found;
            let before = &text[..start];
            let anchored = start == 0
                || before.ends_with(delimiter)
                || (before.ends_with(' ') && before[..before.len() - 1].ends_with(delimiter));
            if anchored {
                hits.push(Hit {
                    marker,
                    start,
                    end: start + phrase.len(),
                });
            }
            from = start + 1;
        }
    }
    hits.sort_by_key(|h| h.start);
    hits
}

/// Strips the rendering separators around a slot without touching interior
/// bytes. The left separator is an optional space plus the delimiter. The
/// right separator is the delimiter (plus a gap space when the next marker
/// was delimiter-space-anchored), preceded by one space in every template
/// position except the final non-toxic continuation slot, which abuts its
/// closing delimiter directly; `space_before_delimiter` selects between the
/// two.
fn clean_slot<'a>(raw: &'a str, delimiter: &str, space_before_delimiter: bool) -> &'a str {
    let mut s = raw;
    let lead = s.strip_prefix(' ').unwrap_or(s);
    if let Some(rest) = lead.strip_prefix(delimiter) {
        s = rest;
    }
    let tail = s.strip_suffix(' ').unwrap_or(s);
    if let Some(rest) = tail.strip_suffix(delimiter) {
        if space_before_delimiter {
            return rest.strip_suffix(' ').unwrap_or(rest);
        }
        return rest;
    }
    s
}

fn parse_lenient(text: &str, templates: &TemplateSet) -> ChainParseResult {
    let delimiter = templates.delimiter();
    let all_hits = scan_markers(text, templates);
    let mut diagnostics = Vec::new();

    // Keep the first occurrence of each marker, flag the rest.
    let mut kept: Vec<Hit> = Vec::new();
    for hit in &all_hits {
        if kept.iter().any(|k| k.marker == hit.marker) {
            diagnostics.push(Diagnostic {
                position: hit.start,
                expected: format!(
                    "a single occurrence of `{}`",
                    phrase_of(hit.marker, templates)
                ),
                found: "duplicated marker".to_string(),
            });
        } else {
            kept.push(hit.clone());
        }
    }

    if kept.is_empty() {
        diagnostics.push(Diagnostic {
            position: 0,
            expected: format!("`{}`", markers::STEP_INTRO),
            found: snippet(text),
        });
        return ChainParseResult {
            record: None,
            diagnostics,
            complete: false,
        };
    }

    let find = |marker: Marker| kept.iter().find(|h| h.marker == marker);
    // Slot content runs from a marker's end to the next marker occurrence
    // (duplicates included, since they still delimit content).
    let slot_after = |marker: Marker, space_before_delimiter: bool| -> Option<String> {
        let hit = find(marker)?;
        let end = all_hits
            .iter()
            .map(|h| h.start)
            .filter(|&s| s > hit.end)
            .min()
            .unwrap_or(text.len());
        Some(clean_slot(&text[hit.end..end], delimiter, space_before_delimiter).to_string())
    };

    // Prompt: everything before the first marker.
    let first_start = kept.iter().map(|h| h.start).min().unwrap();
    let prompt = clean_slot(&text[..first_start], delimiter, true).to_string();

    // Toxicity verdict.
    let toxic_hit = find(Marker::VerdictToxic);
    let non_toxic_hit = find(Marker::VerdictNonToxic);
    let is_toxic = match (toxic_hit, non_toxic_hit) {
        (Some(t), Some(n)) => {
            diagnostics.push(Diagnostic {
                position: t.start.max(n.start),
                expected: "a single toxicity verdict".to_string(),
                found: "both toxic and non-toxic verdicts".to_string(),
            });
            Some(t.start < n.start)
        }
        (Some(_), None) => Some(true),
        (None, Some(_)) => Some(false),
        (None, None) => {
            diagnostics.push(Diagnostic {
                position: first_start,
                expected: format!(
                    "`{}` or `{}`",
                    markers::VERDICT_TOXIC,
                    markers::VERDICT_NON_TOXIC
                ),
                found: "no toxicity verdict".to_string(),
            });
            None
        }
    };

    // Context judgment.
    let yes_hit = find(Marker::ContextYesToxic).or_else(|| find(Marker::ContextYesNonToxic));
    let no_hit = find(Marker::ContextNoToxic).or_else(|| find(Marker::ContextNoNonToxic));
    let cont_hit = find(Marker::ContinuationIntro);
    let has_context = match (yes_hit, no_hit) {
        (Some(y), Some(n)) => {
            diagnostics.push(Diagnostic {
                position: y.start.max(n.start),
                expected: "a single context judgment".to_string(),
                found: "both context judgments".to_string(),
            });
            Some(y.start < n.start)
        }
        (Some(_), None) => Some(true),
        (None, Some(_)) => Some(false),
        (None, None) => {
            if let Some(cont) = cont_hit {
                diagnostics.push(Diagnostic {
                    position: cont.start,
                    expected: "a context judgment before the continuation".to_string(),
                    found: format!("`{}` without one", markers::CONTINUATION_INTRO),
                });
                Some(true)
            } else {
                diagnostics.push(Diagnostic {
                    position: text.len(),
                    expected: "a context judgment".to_string(),
                    found: "none".to_string(),
                });
                None
            }
        }
    };

    // A no-context judgment followed by a continuation step contradicts
    // itself; the explicit judgment wins and the continuation is dropped.
    if has_context == Some(false) {
        if let Some(cont) = cont_hit {
            diagnostics.push(Diagnostic {
                position: cont.start,
                expected: "no continuation after a no-context judgment".to_string(),
                found: format!("`{}`", markers::CONTINUATION_INTRO),
            });
        }
    }

    // Markers inconsistent with the verdict.
    if is_toxic == Some(false) {
        for marker in [
            Marker::MaskIntro,
            Marker::FulfillIntro,
            Marker::ContextYesToxic,
            Marker::ContextNoToxic,
        ] {
            if let Some(hit) = find(marker) {
                diagnostics.push(Diagnostic {
                    position: hit.start,
                    expected: "no toxic-branch markers after a non-toxic verdict".to_string(),
                    found: format!("`{}`", phrase_of(marker, templates)),
                });
            }
        }
    }
    if is_toxic == Some(true) {
        for marker in [Marker::ContextYesNonToxic, Marker::ContextNoNonToxic] {
            if let Some(hit) = find(marker) {
                diagnostics.push(Diagnostic {
                    position: hit.start,
                    expected: "no non-toxic-branch markers after a toxic verdict".to_string(),
                    found: format!("`{}`", phrase_of(marker, templates)),
                });
            }
        }
    }

    let masked = slot_after(Marker::MaskIntro, true);
    let rephrased = slot_after(Marker::FulfillIntro, true);
    // The non-toxic template closes its final continuation with a bare
    // delimiter; every other slot position is separated by space-delimiter.
    let continuation = find(Marker::ContinuationIntro).map(|hit| {
        let end = all_hits
            .iter()
            .map(|h| h.start)
            .filter(|&s| s > hit.end)
            .min()
            .unwrap_or(text.len());
        let spaced = !(is_toxic == Some(false) && end == text.len());
        clean_slot(&text[hit.end..end], delimiter, spaced).to_string()
    });

    let record = build_lenient_record(
        prompt,
        is_toxic,
        has_context,
        masked,
        rephrased,
        continuation,
        &mut diagnostics,
        text.len(),
    );

    diagnostics.sort_by_key(|d| d.position);
    let complete = record.is_some() && diagnostics.is_empty();
    ChainParseResult {
        record,
        diagnostics,
        complete,
    }
}

#[allow(clippy::too_many_arguments)]
fn build_lenient_record(
    prompt: String,
    is_toxic: Option<bool>,
    has_context: Option<bool>,
    masked: Option<String>,
    rephrased: Option<String>,
    continuation: Option<String>,
    diagnostics: &mut Vec<Diagnostic>,
    text_len: usize,
) -> Option<DetoxChainRecord> {
    let is_toxic = is_toxic?;
    let has_context = has_context?;

    let mut missing_step = |step: &str| {
        diagnostics.push(Diagnostic {
            position: text_len,
            expected: format!("a recoverable {step} step"),
            found: "none".to_string(),
        });
    };

    let (masked_prompt, rephrased_prompt) = if is_toxic {
        let masked = match masked {
            Some(m) => m,
            None => {
                missing_step("span masking");
                return None;
            }
        };
        let rephrased = match rephrased {
            Some(r) => r,
            None => {
                missing_step("span fulfilling");
                return None;
            }
        };
        (Some(masked), Some(rephrased))
    } else {
        (None, None)
    };

    let continuation = if has_context {
        match continuation {
            Some(c) => Some(c),
            None => {
                missing_step("continuation");
                return None;
            }
        }
    } else {
        None
    };

    Some(DetoxChainRecord {
        id: String::new(),
        prompt,
        is_toxic,
        masked_prompt,
        rephrased_prompt,
        has_context,
        continuation,
        branch: ChainBranch::from_flags(is_toxic, has_context),
    })
}

fn phrase_of(marker: Marker, templates: &TemplateSet) -> String {
    match marker {
        Marker::StepIntro => markers::STEP_INTRO.to_string(),
        Marker::VerdictToxic => markers::VERDICT_TOXIC.to_string(),
        Marker::VerdictNonToxic => markers::VERDICT_NON_TOXIC.to_string(),
        Marker::MaskIntro => markers::MASK_INTRO.to_string(),
        Marker::FulfillIntro => templates.fulfill_marker(),
        Marker::ContextYesToxic => markers::CONTEXT_YES_TOXIC.to_string(),
        Marker::ContextNoToxic => markers::CONTEXT_NO_TOXIC.to_string(),
        Marker::ContextYesNonToxic => markers::CONTEXT_YES_NON_TOXIC.to_string(),
        Marker::ContextNoNonToxic => markers::CONTEXT_NO_NON_TOXIC.to_string(),
        Marker::ContinuationIntro => markers::CONTINUATION_INTRO.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::render_chain;

    fn templates() -> TemplateSet {
        TemplateSet::default()
    }

    #[test]
    fn strict_round_trips_all_branches() {
        let records = [
            DetoxChainRecord::toxic_with_cont("", "P", "M <MASK>", "R", "G"),
            DetoxChainRecord::toxic_no_cont("", "P", "M", "R"),
            DetoxChainRecord::non_toxic_with_cont("", "P", "G"),
            DetoxChainRecord::non_toxic_no_cont("", "P"),
        ];
        for record in records {
            let text = render_chain(&record, &templates()).unwrap();
            let result = parse_chain(&text, &templates(), ParseMode::Strict).unwrap();
            assert!(result.complete);
            assert_eq!(result.record.unwrap(), record);
        }
    }

    #[test]
    fn strict_round_trips_slots_abutting_the_delimiter() {
        // A generation ending in `#` makes the trailing delimiter ambiguous
        // without backtracking.
        let record = DetoxChainRecord::non_toxic_with_cont("", "P", "G#");
        let text = render_chain(&record, &templates()).unwrap();
        let result = parse_chain(&text, &templates(), ParseMode::Strict).unwrap();
        assert_eq!(result.record.unwrap(), record);
    }

    #[test]
    fn strict_error_names_first_mismatched_marker() {
        let text = "###P ###Let's detoxify step by step. ###The text is sort of toxic.";
        let err = parse_chain(text, &templates(), ParseMode::Strict).unwrap_err();
        match err {
            ChainError::Parse { expected, .. } => {
                assert!(expected.contains("The text is"), "expected: {expected}")
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn lenient_matches_strict_on_rendered_text() {
        let record = DetoxChainRecord::toxic_with_cont("", "P", "a <MASK> b", "a x b", "G");
        let text = render_chain(&record, &templates()).unwrap();
        let lenient = parse_chain(&text, &templates(), ParseMode::Lenient).unwrap();
        assert!(lenient.complete, "diagnostics: {:?}", lenient.diagnostics);
        assert_eq!(lenient.record.unwrap(), record);
    }

    #[test]
    fn lenient_parses_case_study_chain_without_trailing_delimiter() {
        let text = "###Jeb Bush finally—fucking finally—dropped out of the Republican primary \
                    campaign over the weekend ###Let's detoxify step by step. ###The text is \
                    toxic. ###Mask the toxic portion of the text: ###jeb bush finally <MASK> out \
                    of the republican primary campaign over the weekend ###Find one or several \
                    non-toxic and appropriate tokens to replace <MASK> and the masked text can be \
                    rephrased into a non-toxic version: ###jeb bush finally dropped out of the \
                    republican primary campaign over the weekend ###The rephrased prompt has \
                    enough context. ###The Continuation is: ###jeb bush finally dropped out of \
                    the republican primary campaign over the weekend after his poor performance \
                    in the latest poll. he had been struggling to get support from republicans";
        let result = parse_chain(text, &templates(), ParseMode::Lenient).unwrap();
        let record = result.record.expect("record recovered");
        assert!(record.is_toxic);
        assert_eq!(record.branch, ChainBranch::ToxicWithCont);
        assert!(record.masked_prompt.unwrap().contains("<MASK>"));
        assert!(record
            .continuation
            .unwrap()
            .ends_with("support from republicans"));
    }

    #[test]
    fn lenient_flags_contradictory_context_and_continuation() {
        let text = "###P ###Let's detoxify step by step. ###The text is toxic. ###Mask the toxic \
                    portion of the text: ###m <MASK> ###Find one or several non-toxic and \
                    appropriate tokens to replace <MASK> and the masked text can be rephrased \
                    into a non-toxic version: ###r ###The rephrased prompt does not have enough \
                    context, so there is no need to generate a continuation. ###The Continuation \
                    is: ###still here";
        let result = parse_chain(text, &templates(), ParseMode::Lenient).unwrap();
        assert!(!result.complete);
        assert!(result.diagnostics.iter().any(|d| d
            .expected
            .contains("no continuation after a no-context judgment")));
        let record = result.record.expect("record still recovered");
        assert_eq!(record.branch, ChainBranch::ToxicNoCont);
        assert_eq!(record.continuation, None);
    }

    #[test]
    fn lenient_flags_duplicated_markers() {
        let text = "###P ###Let's detoxify step by step. ###The text is non-toxic. ###It has \
                    enough context. ###The Continuation is: ###g ###The Continuation is: ###h###";
        let result = parse_chain(text, &templates(), ParseMode::Lenient).unwrap();
        assert!(!result.complete);
        assert!(result
            .diagnostics
            .iter()
            .any(|d| d.found.contains("duplicated")));
        // First occurrence wins.
        assert_eq!(result.record.unwrap().continuation.unwrap(), "g");
    }

    #[test]
    fn lenient_handles_chain_starting_at_the_step_intro() {
        // Some models drop the leading prompt echo entirely.
        let text = "Let's detoxify step by step. ###The text is non-toxic. ###The prompt does \
                    not have enough context, so there is no need to generate a continuation.";
        let result = parse_chain(text, &templates(), ParseMode::Lenient).unwrap();
        let record = result.record.expect("record recovered");
        assert_eq!(record.branch, ChainBranch::NonToxicNoCont);
        assert_eq!(record.prompt, "");
    }

    #[test]
    fn lenient_never_errors_on_garbage() {
        let result = parse_chain("complete nonsense", &templates(), ParseMode::Lenient).unwrap();
        assert!(!result.complete);
        assert!(result.record.is_none());
        assert!(!result.diagnostics.is_empty());
    }

    #[test]
    fn marker_phrases_inside_slots_are_not_hits() {
        // The phrase lacks a delimiter anchor, so it is slot content.
        let record =
            DetoxChainRecord::non_toxic_with_cont("", "P", "he said The Continuation is: nothing");
        let text = render_chain(&record, &templates()).unwrap();
        let result = parse_chain(&text, &templates(), ParseMode::Lenient).unwrap();
        assert!(result.complete, "diagnostics: {:?}", result.diagnostics);
        assert_eq!(result.record.unwrap(), record);
    }
}
