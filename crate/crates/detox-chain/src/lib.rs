//! Construction and evaluation of step-by-step detoxification ("detox chain")
//! training corpora.
//!
//! The crate covers the full data path: a span-level toxicity model
//! ([`span`]), span masking and non-toxic infilling ([`pipeline`]), a
//! byte-exact codec for the four-branch reasoning-chain text format
//! ([`chain`]), pluggable scorer/generator backends with offline mocks
//! ([`oracles`]), and the corpus-level metric suite ([`eval`]).

pub mod chain;
pub mod eval;
pub mod oracles;
pub mod pipeline;
pub mod record;
pub mod span;
pub mod synthetic;

pub use chain::{ChainBranch, ChainParseResult, DetoxChainRecord, TemplateSet};
pub use record::{PromptRecord, Split};
