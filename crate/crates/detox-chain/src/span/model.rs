//! The span-level toxicity network.
//!
//! Architecture: hashed token embeddings feed a one-layer contextual encoder
//! (each token sees the mean embedding of the whole text), whose states are
//! mean-pooled into a global toxicity head and convolved with kernel size =
//! stride = k into per-span features classified by a small feed-forward
//! head. Everything is f64 with handwritten gradients; see `train` for the
//! backward pass and the finite-difference check that pins it down.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::segment::{segment_spans, SpanSegmentation};
use super::tokenize::{Tokenizer, WhitespaceTokenizer};
use super::{SpanError, SpanScoreVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanCnnConfig {
    /// Span length and convolution stride, in tokens.
    pub k: usize,
    /// Detection threshold for toxic spans.
    pub lambda: f64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub conv_channels: usize,
    pub ffn_hidden: usize,
    /// Hashed vocabulary size; tokens map to buckets by FNV-1a of their
    /// lowercased bytes.
    pub vocab_buckets: usize,
    /// Encoder capacity; longer inputs are truncated with a warning flag.
    pub max_tokens: usize,
    pub tokenizer_id: String,
}

impl Default for SpanCnnConfig {
    fn default() -> Self {
        Self {
            k: 2,
            lambda: 0.3,
            embed_dim: 16,
            hidden_dim: 16,
            conv_channels: 16,
            ffn_hidden: 16,
            vocab_buckets: 4096,
            max_tokens: 512,
            tokenizer_id: "whitespace".to_string(),
        }
    }
}

impl SpanCnnConfig {
    /// A minimal configuration for gradient checks and fast tests.
    pub fn tiny() -> Self {
        Self {
            embed_dim: 4,
            hidden_dim: 4,
            conv_channels: 4,
            ffn_hidden: 4,
            vocab_buckets: 32,
            max_tokens: 64,
            ..Self::default()
        }
    }
}

/// Trainable tensors. Shapes are derivable from the config; biases are kept
/// as one-element vectors so every tensor flattens uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Params {
    pub embed: Vec<f64>, // V x d
    pub w1: Vec<f64>,    // H x d (token projection)
    pub u1: Vec<f64>,    // H x d (context projection)
    pub b1: Vec<f64>,    // H
    pub wg: Vec<f64>,    // H (global head)
    pub bg: Vec<f64>,    // 1
    pub wc: Vec<f64>,    // C x (k*H) (span convolution)
    pub bc: Vec<f64>,    // C
    pub wf: Vec<f64>,    // F x C (span feed-forward)
    pub bf: Vec<f64>,    // F
    pub ws: Vec<f64>,    // F (span head)
    pub bs: Vec<f64>,    // 1
}

impl Params {
    fn zeros(config: &SpanCnnConfig) -> Self {
        let (v, d, h, c, f, k) = (
            config.vocab_buckets,
            config.embed_dim,
            config.hidden_dim,
            config.conv_channels,
            config.ffn_hidden,
            config.k,
        );
        Self {
            embed: vec![0.0; v * d],
            w1: vec![0.0; h * d],
            u1: vec![0.0; h * d],
            b1: vec![0.0; h],
            wg: vec![0.0; h],
            bg: vec![0.0; 1],
            wc: vec![0.0; c * k * h],
            bc: vec![0.0; c],
            wf: vec![0.0; f * c],
            bf: vec![0.0; f],
            ws: vec![0.0; f],
            bs: vec![0.0; 1],
        }
    }

    fn seeded(config: &SpanCnnConfig, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut params = Self::zeros(config);
        let mut init = |tensor: &mut [f64], fan_in: usize| {
            let r = 1.0 / (fan_in as f64).sqrt();
            for value in tensor {
                *value = rng.gen_range(-r..r);
            }
        };
        let d = config.embed_dim;
        let h = config.hidden_dim;
        let c = config.conv_channels;
        init(&mut params.embed, d);
        init(&mut params.w1, d);
        init(&mut params.u1, d);
        init(&mut params.wg, h);
        init(&mut params.wc, config.k * h);
        init(&mut params.wf, c);
        init(&mut params.ws, config.ffn_hidden);
        params
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, &Vec<f64>)> {
        vec![
            ("embed", &self.embed),
            ("w1", &self.w1),
            ("u1", &self.u1),
            ("b1", &self.b1),
            ("wg", &self.wg),
            ("bg", &self.bg),
            ("wc", &self.wc),
            ("bc", &self.bc),
            ("wf", &self.wf),
            ("bf", &self.bf),
            ("ws", &self.ws),
            ("bs", &self.bs),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        vec![
            ("embed", &mut self.embed),
            ("w1", &mut self.w1),
            ("u1", &mut self.u1),
            ("b1", &mut self.b1),
            ("wg", &mut self.wg),
            ("bg", &mut self.bg),
            ("wc", &mut self.wc),
            ("bc", &mut self.bc),
            ("wf", &mut self.wf),
            ("bf", &mut self.bf),
            ("ws", &mut self.ws),
            ("bs", &mut self.bs),
        ]
    }

    pub(crate) fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Scores emitted by a forward pass, shaped to one text.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutputs {
    pub global: f64,
    pub span_scores: Vec<f64>,
}

/// Inference result for one text.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreResult {
    pub global: f64,
    pub spans: SpanScoreVector,
    /// Set when the input exceeded the encoder capacity and was truncated.
    pub truncated: bool,
    pub segmentation: SpanSegmentation,
}

/// Cached activations from a tracked forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub(crate) struct ForwardTrace {
    pub ids: Vec<usize>,
    pub context: Vec<f64>,     // d
    pub hidden: Vec<Vec<f64>>, // m x H
    pub pooled: Vec<f64>,      // H
    pub conv: Vec<Vec<f64>>,   // n x C, tanh applied
    pub ffn: Vec<Vec<f64>>,    // n x F, tanh applied
    pub outputs: ModelOutputs,
    pub spans: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct SpanCnnModel {
    pub(crate) config: SpanCnnConfig,
    pub(crate) params: Params,
}

impl SpanCnnModel {
    /// Randomly initialized model, reproducible for a fixed seed.
    pub fn seeded(config: SpanCnnConfig, seed: u64) -> Self {
        let params = Params::seeded(&config, seed);
        Self { config, params }
    }

    /// All-zero parameters; every head outputs 0.5 regardless of input.
    pub fn zeroed(config: SpanCnnConfig) -> Self {
        let params = Params::zeros(&config);
        Self { config, params }
    }

    pub fn config(&self) -> &SpanCnnConfig {
        &self.config
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn lambda(&self) -> f64 {
        self.config.lambda
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    /// Resolves the tokenizer named by the config.
    pub fn tokenizer(&self) -> Result<Box<dyn Tokenizer>, SpanError> {
        match self.config.tokenizer_id.as_str() {
            "whitespace" => Ok(Box::new(WhitespaceTokenizer)),
            other => Err(SpanError::Checkpoint(format!(
                "unknown tokenizer id `{other}`"
            ))),
        }
    }

    fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.to_lowercase().as_bytes()) % self.config.vocab_buckets as u64) as usize
    }

    /// Scores a text: one global score plus one score per span, all in
    /// [0, 1]. Inputs beyond the encoder capacity are truncated and flagged.
    pub fn score(&self, text: &str) -> Result<ScoreResult, SpanError> {
        let tokenizer = self.tokenizer()?;
        let mut segmentation = segment_spans(text, tokenizer.as_ref(), self.config.k)?;
        let truncated = segmentation.tokens.len() > self.config.max_tokens;
        if truncated {
            segmentation.tokens.truncate(self.config.max_tokens);
            segmentation
                .spans
                .retain(|span| span.start < self.config.max_tokens);
            if let Some(last) = segmentation.spans.last_mut() {
                if last.end > self.config.max_tokens {
                    last.end = self.config.max_tokens;
                    last.text = tokenizer.detokenize(&segmentation.tokens[last.start..last.end]);
                }
            }
        }
        let trace = self.forward(&segmentation);
        Ok(ScoreResult {
            global: trace.outputs.global,
            spans: SpanScoreVector {
                scores: trace.outputs.span_scores,
                k: self.config.k,
            },
            truncated,
            segmentation,
        })
    }

    /// Scores over an existing segmentation, without re-tokenizing.
    pub fn outputs_for(&self, segmentation: &SpanSegmentation) -> ModelOutputs {
        self.forward(segmentation).outputs
    }

    /// Names of the trainable tensors, in a fixed order.
    pub fn tensor_names(&self) -> Vec<&'static str> {
        self.params.tensors().into_iter().map(|(n, _)| n).collect()
    }

    /// Read access to one trainable tensor.
    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.params
            .tensors()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t.as_slice())
    }

    /// Write access to one trainable tensor, for perturbation studies.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.params
            .tensors_mut()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t.as_mut_slice())
    }

    /// Forward pass over an existing segmentation, keeping activations.
    pub(crate) fn forward(&self, segmentation: &SpanSegmentation) -> ForwardTrace {
        let config = &self.config;
        let (d, h_dim, c_dim, f_dim, k) = (
            config.embed_dim,
            config.hidden_dim,
            config.conv_channels,
            config.ffn_hidden,
            config.k,
        );
        let m = segmentation.tokens.len();
        let ids: Vec<usize> = segmentation.tokens.iter().map(|t| self.bucket(t)).collect();

        // Context vector: mean embedding over the text.
        let mut context = vec![0.0; d];
        for &id in &ids {
            let row = &self.params.embed[id * d..(id + 1) * d];
            for (ci, ei) in context.iter_mut().zip(row) {
                *ci += ei;
            }
        }
        for ci in context.iter_mut() {
            *ci /= m as f64;
        }

        // Contextual encoder states.
        let mut hidden = Vec::with_capacity(m);
        for &id in &ids {
            let e = &self.params.embed[id * d..(id + 1) * d];
            let mut state = vec![0.0; h_dim];
            for (row, value) in state.iter_mut().enumerate() {
                let mut acc = self.params.b1[row];
                let w_row = &self.params.w1[row * d..(row + 1) * d];
                let u_row = &self.params.u1[row * d..(row + 1) * d];
                for i in 0..d {
                    acc += w_row[i] * e[i] + u_row[i] * context[i];
                }
                *value = acc.tanh();
            }
            hidden.push(state);
        }

        // Global head over mean-pooled states.
        let mut pooled = vec![0.0; h_dim];
        for state in &hidden {
            for (pi, si) in pooled.iter_mut().zip(state) {
                *pi += si;
            }
        }
        for pi in pooled.iter_mut() {
            *pi /= m as f64;
        }
        let a_global = self.params.bg[0]
            + pooled
                .iter()
                .zip(&self.params.wg)
                .map(|(p, w)| p * w)
                .sum::<f64>();
        let global = sigmoid(a_global);

        // Span convolution (kernel = stride = k, zero-padded remainder) and
        // feed-forward span head.
        let window = k * h_dim;
        let mut conv = Vec::with_capacity(segmentation.spans.len());
        let mut ffn = Vec::with_capacity(segmentation.spans.len());
        let mut span_scores = Vec::with_capacity(segmentation.spans.len());
        let mut spans = Vec::with_capacity(segmentation.spans.len());
        for span in &segmentation.spans {
            spans.push((span.start, span.end));
            let mut v = vec![0.0; window];
            for (slot, t) in (span.start..span.end).enumerate() {
                v[slot * h_dim..(slot + 1) * h_dim].copy_from_slice(&hidden[t]);
            }
            let mut z = vec![0.0; c_dim];
            for (row, zi) in z.iter_mut().enumerate() {
                let w_row = &self.params.wc[row * window..(row + 1) * window];
                let mut acc = self.params.bc[row];
                for i in 0..window {
                    acc += w_row[i] * v[i];
                }
                *zi = acc.tanh();
            }
            let mut u = vec![0.0; f_dim];
            for (row, ui) in u.iter_mut().enumerate() {
                let w_row = &self.params.wf[row * c_dim..(row + 1) * c_dim];
                let mut acc = self.params.bf[row];
                for i in 0..c_dim {
                    acc += w_row[i] * z[i];
                }
                *ui = acc.tanh();
            }
            let a_span = self.params.bs[0]
                + u.iter()
                    .zip(&self.params.ws)
                    .map(|(ui, w)| ui * w)
                    .sum::<f64>();
            span_scores.push(sigmoid(a_span));
            conv.push(z);
            ffn.push(u);
        }

        ForwardTrace {
            ids,
            context,
            hidden,
            pooled,
            conv,
            ffn,
            outputs: ModelOutputs {
                global,
                span_scores,
            },
            spans,
        }
    }

    // -- checkpointing ------------------------------------------------------

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SpanError> {
        let file = std::fs::File::create(path).map_err(io_err)?;
        self.to_writer(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SpanError> {
        let file = std::fs::File::open(path).map_err(io_err)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn to_writer(&self, writer: impl Write) -> Result<(), SpanError> {
        let tensors: BTreeMap<String, Vec<f64>> = self
            .params
            .tensors()
            .into_iter()
            .map(|(name, tensor)| (name.to_string(), tensor.clone()))
            .collect();
        let checkpoint = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            tensors,
        };
        serde_json::to_writer(writer, &checkpoint)
            .map_err(|e| SpanError::Checkpoint(format!("write failed: {e}")))
    }

    pub fn from_reader(reader: impl Read) -> Result<Self, SpanError> {
        let checkpoint: Checkpoint = serde_json::from_reader(reader)
            .map_err(|e| SpanError::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        if checkpoint.format != CHECKPOINT_FORMAT {
            return Err(SpanError::Checkpoint(format!(
                "unknown checkpoint format `{}`",
                checkpoint.format
            )));
        }
        let mut model = Self::zeroed(checkpoint.config);
        model.tokenizer()?;
        for (name, tensor) in model.params.tensors_mut() {
            let stored = checkpoint
                .tensors
                .get(name)
                .ok_or_else(|| SpanError::Checkpoint(format!("missing tensor `{name}`")))?;
            if stored.len() != tensor.len() {
                return Err(SpanError::Checkpoint(format!(
                    "tensor `{name}` has {} values, config implies {}",
                    stored.len(),
                    tensor.len()
                )));
            }
            tensor.copy_from_slice(stored);
        }
        Ok(model)
    }

    /// Errors unless the checkpointed span length matches the expected one.
    pub fn ensure_k(&self, expected: usize) -> Result<(), SpanError> {
        if self.config.k != expected {
            return Err(SpanError::KMismatch {
                expected,
                found: self.config.k,
            });
        }
        Ok(())
    }
}

const CHECKPOINT_FORMAT: &str = "span-cnn-v1";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    config: SpanCnnConfig,
    tensors: BTreeMap<String, Vec<f64>>,
}

fn io_err(e: std::io::Error) -> SpanError {
    SpanError::Checkpoint(format!("i/o: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_span_text_yields_one_score() {
        let model = SpanCnnModel::seeded(SpanCnnConfig::tiny(), 1);
        let result = model.score("hello there").unwrap();
        assert_eq!(result.spans.len(), 1);
        assert!(!result.truncated);
    }

    #[test]
    fn zeroed_model_scores_are_all_one_half() {
        let model = SpanCnnModel::zeroed(SpanCnnConfig::tiny());
        let result = model.score("a b c d e").unwrap();
        assert_eq!(result.global, 0.5);
        assert!(result.spans.scores.iter().all(|&s| s == 0.5));
    }

    #[test]
    fn scores_stay_in_unit_interval_and_count_spans() {
        use rand::{Rng, SeedableRng};
        let model = SpanCnnModel::seeded(SpanCnnConfig::tiny(), 7);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n: usize = rng.gen_range(1..30);
            let text: Vec<String> = (0..n)
                .map(|_| format!("w{}", rng.gen_range(0..100)))
                .collect();
            let text = text.join(" ");
            let result = model.score(&text).unwrap();
            let expected_spans = n.div_ceil(model.k());
            assert_eq!(result.spans.len(), expected_spans);
            assert!((0.0..=1.0).contains(&result.global));
            assert!(result.spans.scores.iter().all(|s| (0.0..=1.0).contains(s)));
        }
    }

    #[test]
    fn scoring_is_deterministic() {
        let model = SpanCnnModel::seeded(SpanCnnConfig::tiny(), 3);
        let a = model.score("some words in a row").unwrap();
        let b = model.score("some words in a row").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn over_capacity_input_is_truncated_with_flag() {
        let mut config = SpanCnnConfig::tiny();
        config.max_tokens = 4;
        let model = SpanCnnModel::seeded(config, 1);
        let result = model.score("a b c d e f g").unwrap();
        assert!(result.truncated);
        assert_eq!(result.segmentation.tokens.len(), 4);
        assert_eq!(result.spans.len(), 2);
    }

    #[test]
    fn empty_text_is_an_error() {
        let model = SpanCnnModel::seeded(SpanCnnConfig::tiny(), 1);
        assert!(matches!(model.score(""), Err(SpanError::EmptyInput)));
    }

    #[test]
    fn checkpoint_round_trip_preserves_scores() {
        let model = SpanCnnModel::seeded(SpanCnnConfig::tiny(), 5);
        let mut buf = Vec::new();
        model.to_writer(&mut buf).unwrap();
        let restored = SpanCnnModel::from_reader(buf.as_slice()).unwrap();
        let text = "you idiot friend of mine";
        assert_eq!(
            model.score(text).unwrap().spans,
            restored.score(text).unwrap().spans
        );
    }

    #[test]
    fn mismatched_k_is_rejected() {
        let model = SpanCnnModel::seeded(SpanCnnConfig::tiny(), 5);
        assert!(model.ensure_k(2).is_ok());
        assert!(matches!(
            model.ensure_k(3),
            Err(SpanError::KMismatch {
                expected: 3,
                found: 2
            })
        ));
    }

    #[test]
    fn corrupt_checkpoint_tensor_is_rejected() {
        let model = SpanCnnModel::seeded(SpanCnnConfig::tiny(), 5);
        let mut buf = Vec::new();
        model.to_writer(&mut buf).unwrap();
        let mut value: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        value["tensors"]["wg"] = serde_json::json!([0.0]);
        let err = SpanCnnModel::from_reader(value.to_string().as_bytes()).unwrap_err();
        assert!(matches!(err, SpanError::Checkpoint(_)));
    }
}
