//! Tokenizer interface and the fixed whitespace tokenizer used offline.

/// Splits text into surface tokens. Implementations must be deterministic;
/// `id()` names the scheme so checkpoints can record it.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;

    /// Inverse of tokenization up to the tokenizer's own conventions.
    fn detokenize(&self, tokens: &[String]) -> String;

    fn id(&self) -> &str;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

/// Whitespace tokenizer: tokens are maximal non-whitespace runs, joined back
/// with single spaces.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }

    fn detokenize(&self, tokens: &[String]) -> String {
        tokens.join(" ")
    }

    fn id(&self) -> &str {
        "whitespace"
    }
}
