//! Synthetic lexicon-determined corpora for offline runs and benchmarks.
//!
//! Toxicity is fully determined by a small word lexicon, so a span model can
//! in principle reach perfect accuracy; that makes these corpora useful for
//! learnability checks and deterministic end-to-end runs without any hosted
//! service.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::oracles::mock::LexiconToxicity;
use crate::record::PromptRecord;
use crate::span::{BankSpan, SpanBank};

/// Benign filler vocabulary for synthetic prompts.
const FILLER_WORDS: &[&str] = &[
    "morning", "walk", "garden", "coffee", "letter", "window", "river", "music", "yellow", "quiet",
    "bright", "gentle", "reading", "paper", "street", "evening", "cloud", "dinner", "simple",
    "wooden", "travel", "winter", "summer", "meadow", "lantern", "harbor", "violet", "copper",
    "orchard", "pebble",
];

/// Stand-in profanity for the synthetic lexicon; scores are fixed.
const TOXIC_WORDS: &[(&str, f64)] = &[("blorgh", 0.9), ("skrung", 0.8)];

/// A generated corpus: prompts (a subset of them toxic), the lexicon oracle
/// that labels them, and a span bank built from the lexicon.
pub struct SyntheticCorpus {
    pub prompts: Vec<PromptRecord>,
    pub oracle: LexiconToxicity,
    pub bank: SpanBank,
    pub toxic_count: usize,
}

/// Generates `total` prompts, `toxic` of which contain one lexicon word at a
/// random position. Deterministic for a fixed seed.
pub fn lexicon_corpus(total: usize, toxic: usize, seed: u64) -> SyntheticCorpus {
    assert!(toxic <= total, "toxic count exceeds total");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let mut make_toxic: Vec<bool> = (0..total).map(|i| i < toxic).collect();
    make_toxic.shuffle(&mut rng);

    let prompts = make_toxic
        .iter()
        .enumerate()
        .map(|(i, &is_toxic)| {
            let len = rng.gen_range(8..14);
            let mut words: Vec<String> = (0..len)
                .map(|_| FILLER_WORDS[rng.gen_range(0..FILLER_WORDS.len())].to_string())
                .collect();
            let mut toxicity = 0.0;
            if is_toxic {
                let (word, score) = TOXIC_WORDS[rng.gen_range(0..TOXIC_WORDS.len())];
                let position = rng.gen_range(0..=words.len());
                words.insert(position, word.to_string());
                toxicity = score;
            }
            PromptRecord::new(format!("syn{i:05}"), words.join(" ")).with_toxicity(toxicity)
        })
        .collect();

    SyntheticCorpus {
        prompts,
        oracle: lexicon_oracle(),
        bank: span_bank(),
        toxic_count: toxic,
    }
}

/// The fixed synthetic lexicon oracle.
pub fn lexicon_oracle() -> LexiconToxicity {
    LexiconToxicity::new(TOXIC_WORDS.iter().map(|(w, s)| (w.to_string(), *s)))
}

/// A span bank drawn from the synthetic lexicon, for augmentation.
pub fn span_bank() -> SpanBank {
    SpanBank::new(
        TOXIC_WORDS
            .iter()
            .map(|(w, s)| BankSpan::new(*w, *s))
            .collect(),
    )
    .expect("fixed scores are in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::ToxicityOracle;

    #[test]
    fn corpus_has_the_requested_toxicity_split() {
        let corpus = lexicon_corpus(50, 10, 7);
        assert_eq!(corpus.prompts.len(), 50);
        let toxic = corpus
            .prompts
            .iter()
            .filter(|p| corpus.oracle.score(&p.text).unwrap() >= 0.5)
            .count();
        assert_eq!(toxic, 10);
        // Gold labels agree with the oracle.
        for p in &corpus.prompts {
            let gold = p.toxicity.unwrap();
            assert_eq!(gold >= 0.5, corpus.oracle.score(&p.text).unwrap() >= 0.5);
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = lexicon_corpus(20, 5, 3);
        let b = lexicon_corpus(20, 5, 3);
        assert_eq!(a.prompts, b.prompts);
        let c = lexicon_corpus(20, 5, 4);
        assert_ne!(a.prompts, c.prompts);
    }

    #[test]
    fn filler_vocabulary_is_disjoint_from_the_lexicon() {
        for (word, _) in TOXIC_WORDS {
            assert!(!FILLER_WORDS.contains(word));
        }
    }
}
