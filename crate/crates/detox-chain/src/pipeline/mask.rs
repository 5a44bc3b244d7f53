//! Span masking: replace detected toxic runs with the placeholder.

use serde::{Deserialize, Serialize};

use crate::span::SpanSegmentation;

/// A text whose toxic runs were replaced by a placeholder, with the original
/// token ranges that were masked out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedText {
    pub text: String,
    /// Original token ranges `[start, end)` replaced, one per placeholder
    /// occurrence, in order.
    pub masked_ranges: Vec<(usize, usize)>,
    pub placeholder: String,
}

impl MaskedText {
    pub fn placeholder_count(&self) -> usize {
        self.masked_ranges.len()
    }

    /// Splices the original token ranges back over the placeholders,
    /// reconstructing the source token sequence.
    pub fn splice_back(&self, original: &SpanSegmentation) -> String {
        let mut ranges = self.masked_ranges.iter();
        let mut out: Vec<&str> = Vec::with_capacity(original.tokens.len());
        for token in self.text.split_whitespace() {
            if token == self.placeholder {
                if let Some(&(start, end)) = ranges.next() {
                    out.extend(original.tokens[start..end].iter().map(String::as_str));
                }
            } else {
                out.push(token);
            }
        }
        out.join(" ")
    }
}

/// Replaces the toxic spans of a segmentation with the placeholder.
///
/// Adjacent toxic spans merge into one maximal run, each replaced by exactly
/// one placeholder occurrence; all other tokens are preserved verbatim in
/// order. Span indices must be valid for the segmentation.
pub fn mask_toxic_spans(
    segmentation: &SpanSegmentation,
    toxic_indices: &[usize],
    placeholder: &str,
) -> MaskedText {
    let n = segmentation.num_spans();
    let mut toxic = vec![false; n];
    for &index in toxic_indices {
        assert!(
            index < n,
            "toxic span index {index} out of range for {n} spans"
        );
        toxic[index] = true;
    }

    let mut tokens: Vec<&str> = Vec::with_capacity(segmentation.tokens.len());
    let mut masked_ranges = Vec::new();
    let mut span = 0;
    while span < n {
        if toxic[span] {
            let run_start = segmentation.spans[span].start;
            while span + 1 < n && toxic[span + 1] {
                span += 1;
            }
            masked_ranges.push((run_start, segmentation.spans[span].end));
            tokens.push(placeholder);
        } else {
            let s = &segmentation.spans[span];
            tokens.extend(
                segmentation.tokens[s.start..s.end]
                    .iter()
                    .map(String::as_str),
            );
        }
        span += 1;
    }

    MaskedText {
        text: tokens.join(" "),
        masked_ranges,
        placeholder: placeholder.to_string(),
    }
}
