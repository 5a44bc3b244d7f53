//! Deterministic mock oracles for offline construction and tests.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{
    ChatCompleter, Generator, MaskFiller, OracleError, PerplexityOracle, SamplingConfig,
    SimilarityOracle, ToxicityOracle,
};

/// Toxicity determined by a word lexicon: the score of a text is the maximum
/// score over lexicon words present as whole tokens, case-insensitively, and
/// 0.0 when none occur.
#[derive(Debug, Clone, Default)]
pub struct LexiconToxicity {
    lexicon: HashMap<String, f64>,
}

/// Builds a lexicon-backed toxicity oracle. Scores must lie in [0, 1].
pub fn lexicon_toxicity_oracle(lexicon: &[(&str, f64)]) -> LexiconToxicity {
    LexiconToxicity::new(lexicon.iter().map(|(w, s)| (w.to_string(), *s)))
}

impl LexiconToxicity {
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>) -> Self {
        let lexicon = entries
            .into_iter()
            .map(|(word, score)| {
                debug_assert!((0.0..=1.0).contains(&score), "lexicon score out of range");
                (word.to_lowercase(), score)
            })
            .collect();
        Self { lexicon }
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.lexicon.keys().map(String::as_str)
    }

    fn score_text(&self, text: &str) -> f64 {
        text.split_whitespace()
            .map(|token| token.trim_matches(|c: char| !c.is_alphanumeric()))
            .filter_map(|token| self.lexicon.get(&token.to_lowercase()))
            .fold(0.0, |acc: f64, score| acc.max(*score))
    }
}

impl ToxicityOracle for LexiconToxicity {
    fn score(&self, text: &str) -> Result<f64, OracleError> {
        Ok(self.score_text(text))
    }
}

/// Similarity as the Jaccard overlap of lowercase whitespace-token sets.
/// Identical texts score 1.0, disjoint texts 0.0.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenOverlapSimilarity;

impl SimilarityOracle for TokenOverlapSimilarity {
    fn sim(&self, a: &str, b: &str) -> Result<f64, OracleError> {
        let set = |text: &str| {
            text.split_whitespace()
                .map(|t| t.to_lowercase())
                .collect::<std::collections::HashSet<_>>()
        };
        let (sa, sb) = (set(a), set(b));
        if sa.is_empty() && sb.is_empty() {
            return Ok(1.0);
        }
        let inter = sa.intersection(&sb).count() as f64;
        let union = sa.union(&sb).count() as f64;
        Ok(inter / union)
    }
}

/// A perplexity oracle returning one constant.
#[derive(Debug, Clone, Copy)]
pub struct ConstPerplexity(pub f64);

impl PerplexityOracle for ConstPerplexity {
    fn ppl(&self, _text: &str) -> Result<f64, OracleError> {
        Ok(self.0)
    }
}

/// A perplexity oracle with per-text overrides over a default value.
#[derive(Debug, Clone, Default)]
pub struct TablePerplexity {
    pub default: f64,
    pub overrides: HashMap<String, f64>,
}

impl TablePerplexity {
    pub fn new(default: f64) -> Self {
        Self {
            default,
            overrides: HashMap::new(),
        }
    }

    pub fn with(mut self, text: impl Into<String>, ppl: f64) -> Self {
        self.overrides.insert(text.into(), ppl);
        self
    }
}

impl PerplexityOracle for TablePerplexity {
    fn ppl(&self, text: &str) -> Result<f64, OracleError> {
        Ok(self.overrides.get(text).copied().unwrap_or(self.default))
    }
}

/// Generator that pops one scripted output list per call.
pub struct ScriptedGenerator {
    script: Mutex<std::collections::VecDeque<Vec<String>>>,
    calls: AtomicUsize,
}

/// Builds a generator whose successive calls return successive script
/// entries; exhausting the script is an error (the test script is too short).
pub fn scripted_generator(script: Vec<Vec<String>>) -> ScriptedGenerator {
    ScriptedGenerator {
        script: Mutex::new(script.into()),
        calls: AtomicUsize::new(0),
    }
}

impl ScriptedGenerator {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&self, _prompt: &str, config: &SamplingConfig) -> Result<Vec<String>, OracleError> {
        let calls = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        let entry = self
            .script
            .lock()
            .unwrap()
            .pop_front()
            .ok_or(OracleError::ScriptExhausted { calls })?;
        if entry.len() != config.num_samples {
            return Err(OracleError::Protocol(format!(
                "script entry has {} texts but num_samples is {}",
                entry.len(),
                config.num_samples
            )));
        }
        Ok(entry)
    }
}

/// Mask filler that pops one scripted completion per call and substitutes it
/// for every placeholder occurrence.
pub struct ScriptedFiller {
    script: Mutex<std::collections::VecDeque<String>>,
    calls: AtomicUsize,
}

pub fn scripted_filler(script: Vec<String>) -> ScriptedFiller {
    ScriptedFiller {
        script: Mutex::new(script.into()),
        calls: AtomicUsize::new(0),
    }
}

impl ScriptedFiller {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl MaskFiller for ScriptedFiller {
    fn fill(&self, masked: &str, placeholder: &str) -> Result<String, OracleError> {
        let calls = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        let replacement = self
            .script
            .lock()
            .unwrap()
            .pop_front()
            .ok_or(OracleError::ScriptExhausted { calls })?;
        Ok(masked.replace(placeholder, &replacement))
    }
}

/// Mask filler that substitutes a fixed replacement for every placeholder.
#[derive(Debug, Clone)]
pub struct NeutralFiller {
    pub replacement: String,
}

impl NeutralFiller {
    pub fn new(replacement: impl Into<String>) -> Self {
        Self {
            replacement: replacement.into(),
        }
    }
}

impl Default for NeutralFiller {
    fn default() -> Self {
        Self::new("something")
    }
}

impl MaskFiller for NeutralFiller {
    fn fill(&self, masked: &str, placeholder: &str) -> Result<String, OracleError> {
        Ok(masked.replace(placeholder, &self.replacement))
    }
}

/// Generator that echoes the prompt back as every sample.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoGenerator;

impl Generator for EchoGenerator {
    fn generate(&self, prompt: &str, config: &SamplingConfig) -> Result<Vec<String>, OracleError> {
        Ok(vec![prompt.to_string(); config.num_samples])
    }
}

/// Chat backend that pops scripted answers and records every
/// (instruction, input) pair it was asked.
pub struct ScriptedChat {
    script: Mutex<std::collections::VecDeque<String>>,
    log: Mutex<Vec<(String, String)>>,
    calls: AtomicUsize,
}

pub fn scripted_chat(script: Vec<String>) -> ScriptedChat {
    ScriptedChat {
        script: Mutex::new(script.into()),
        log: Mutex::new(Vec::new()),
        calls: AtomicUsize::new(0),
    }
}

impl ScriptedChat {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Every (instruction, input) pair seen, in call order.
    pub fn log(&self) -> Vec<(String, String)> {
        self.log.lock().unwrap().clone()
    }
}

impl ChatCompleter for ScriptedChat {
    fn complete(&self, instruction: &str, input: &str) -> Result<String, OracleError> {
        let calls = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        self.log
            .lock()
            .unwrap()
            .push((instruction.to_string(), input.to_string()));
        self.script
            .lock()
            .unwrap()
            .pop_front()
            .ok_or(OracleError::ScriptExhausted { calls })
    }
}

/// Wraps a toxicity oracle and counts backend calls; used to assert cache
/// behavior.
pub struct CountingToxicity<T> {
    inner: T,
    calls: AtomicUsize,
}

impl<T> CountingToxicity<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<T: ToxicityOracle> ToxicityOracle for CountingToxicity<T> {
    fn score(&self, text: &str) -> Result<f64, OracleError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score(text)
    }
}
