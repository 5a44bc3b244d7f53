//! Tiling text into non-overlapping k-token spans.

use serde::{Deserialize, Serialize};

use super::tokenize::Tokenizer;
use super::SpanError;

/// One contiguous token window: `[start, end)` token indices plus the
/// detokenized surface text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// A text tiled into spans: every span has length `k` except possibly a
/// final remainder span, which is kept rather than dropped so no tokens are
/// lost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanSegmentation {
    pub text: String,
    pub tokens: Vec<String>,
    pub k: usize,
    pub spans: Vec<Span>,
}

impl SpanSegmentation {
    pub fn num_spans(&self) -> usize {
        self.spans.len()
    }

}

/// Segments `text` into ceil(token_count / k) spans of stride `k`.
pub fn segment_spans(
    text: &str,
    tokenizer: &dyn Tokenizer,
    k: usize,
) -> Result<SpanSegmentation, SpanError> {
    if k == 0 {
        return Err(SpanError::InvalidK(k));
    }
    let tokens = tokenizer.tokenize(text);
    if tokens.is_empty() {
        return Err(SpanError::EmptyInput);
    }
    let spans = (0..tokens.len())
        .step_by(k)
        .map(|start| {
            let end = (start + k).min(tokens.len());
            Span {
                start,
                end,
                text: tokenizer.detokenize(&tokens[start..end]),
            }
        })
        .collect();
    Ok(SpanSegmentation {
        text: text.to_string(),
        tokens,
        k,
        spans,
    })
}
