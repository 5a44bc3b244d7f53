//! Training loop for the span toxicity model: handwritten backpropagation,
//! Adam/SGD updates, seeded shuffling, optional augmentation, and a held-out
//! accuracy report.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::oracles::ToxicityOracle;

use super::augment::{augment_with_toxic_spans, SpanBank};
use super::loss::{compute_loss, AlphaPolicy, SpanTrainingSample};
use super::model::{ForwardTrace, Params, SpanCnnConfig, SpanCnnModel};
use super::segment::{segment_spans, SpanSegmentation};
use super::SpanError;

/// A raw training corpus row; unlabeled fields are filled by the toxicity
/// oracle when one is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub text: String,
    #[serde(default)]
    pub global_label: Option<f64>,
    #[serde(default)]
    pub span_labels: Option<Vec<f64>>,
}

impl TrainingRow {
    pub fn labeled(text: impl Into<String>, global: f64, spans: Vec<f64>) -> Self {
        Self {
            text: text.into(),
            global_label: Some(global),
            span_labels: Some(spans),
        }
    }

    pub fn unlabeled(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            global_label: None,
            span_labels: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Adam,
            learning_rate: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: SpanCnnConfig,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub alpha: AlphaPolicy,
    /// Probability of inserting a bank span into each training sample.
    pub augmentation_rate: f64,
    /// Snap soft labels to {0, 1} before training.
    pub binarize_labels: bool,
    /// Fraction of the corpus reserved for the held-out accuracy report.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: SpanCnnConfig::default(),
            epochs: 30,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            alpha: AlphaPolicy::default(),
            augmentation_rate: 0.0,
            binarize_labels: false,
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub seed: u64,
    pub epochs: usize,
    /// Mean per-sample loss for each epoch.
    pub epoch_losses: Vec<f64>,
    pub train_samples: usize,
    pub holdout_samples: usize,
    pub augmented_samples: usize,
    pub num_params: usize,
    /// Fraction of held-out spans whose 0.5-binarized prediction matches the
    /// 0.5-binarized label; absent when there is no holdout.
    pub holdout_span_accuracy: Option<f64>,
    pub holdout_instance_accuracy: Option<f64>,
}

#[derive(Debug)]
pub struct TrainedSpanCnn {
    pub model: SpanCnnModel,
    pub report: TrainingReport,
}

struct PreparedSample {
    segmentation: SpanSegmentation,
    sample: SpanTrainingSample,
}

/// Trains a span model on the corpus.
///
/// Every row must be labeled, or a toxicity oracle must be supplied to label
/// the text and span surfaces on the fly. Training is reproducible for a
/// fixed seed: the same corpus and config give the same loss curve and the
/// same weights.
pub fn train_span_cnn(
    corpus: &[TrainingRow],
    bank: Option<&SpanBank>,
    oracle: Option<&dyn ToxicityOracle>,
    config: &TrainConfig,
) -> Result<TrainedSpanCnn, SpanError> {
    if corpus.is_empty() {
        return Err(SpanError::EmptyInput);
    }
    if config.augmentation_rate > 0.0 && bank.is_none_or(|b| b.is_empty()) {
        return Err(SpanError::ShapeMismatch(
            "augmentation rate > 0 requires a non-empty span bank".into(),
        ));
    }

    let mut model = SpanCnnModel::seeded(config.model.clone(), config.seed);
    let tokenizer = model.tokenizer()?;
    let k = config.model.k;

    let mut prepared = Vec::with_capacity(corpus.len());
    for (index, row) in corpus.iter().enumerate() {
        let segmentation = segment_spans(&row.text, tokenizer.as_ref(), k)?;
        let sample = resolve_labels(row, &segmentation, oracle, &config.alpha, index)?;
        let sample = if config.binarize_labels {
            sample.binarized(&config.alpha)
        } else {
            sample
        };
        prepared.push(PreparedSample {
            segmentation,
            sample,
        });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    order.shuffle(&mut rng);
    let holdout_count = ((prepared.len() as f64) * config.holdout_fraction).round() as usize;
    let holdout_count = holdout_count.min(prepared.len().saturating_sub(1));
    let (holdout_idx, train_idx) = order.split_at(holdout_count);

    // Augment the training portion only; the holdout stays untouched.
    let mut train_set = Vec::with_capacity(train_idx.len());
    let mut augmented = 0;
    for &i in train_idx {
        let p = &prepared[i];
        let sample = if config.augmentation_rate > 0.0 {
            let bank = bank.expect("checked above");
            let out = augment_with_toxic_spans(
                &p.sample,
                bank,
                config.augmentation_rate,
                &mut rng,
                tokenizer.as_ref(),
                k,
                &config.alpha,
            )?;
            if out.text != p.sample.text {
                augmented += 1;
            }
            out
        } else {
            p.sample.clone()
        };
        let segmentation = segment_spans(&sample.text, tokenizer.as_ref(), k)?;
        train_set.push(PreparedSample {
            segmentation,
            sample,
        });
    }

    let mut optimizer = Optimizer::new(&model, &config.optimizer);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut train_order: Vec<usize> = (0..train_set.len()).collect();
    for _ in 0..config.epochs {
        train_order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &train_order {
            let p = &train_set[i];
            let trace = model.forward(&p.segmentation);
            let loss = compute_loss(&trace.outputs, &p.sample)?;
            epoch_loss += loss.total;
            let grads = backward(&model, &trace, &p.sample);
            optimizer.step(&mut model.params, &grads);
        }
        epoch_losses.push(epoch_loss / train_set.len().max(1) as f64);
    }

    let holdout: Vec<&PreparedSample> = holdout_idx.iter().map(|&i| &prepared[i]).collect();
    let (span_acc, inst_acc) = holdout_accuracy(&model, &holdout);

    let report = TrainingReport {
        seed: config.seed,
        epochs: config.epochs,
        epoch_losses,
        train_samples: train_set.len(),
        holdout_samples: holdout.len(),
        augmented_samples: augmented,
        num_params: model.num_params(),
        holdout_span_accuracy: span_acc,
        holdout_instance_accuracy: inst_acc,
    };
    Ok(TrainedSpanCnn { model, report })
}

fn resolve_labels(
    row: &TrainingRow,
    segmentation: &SpanSegmentation,
    oracle: Option<&dyn ToxicityOracle>,
    policy: &AlphaPolicy,
    index: usize,
) -> Result<SpanTrainingSample, SpanError> {
    let n = segmentation.num_spans();
    let unlabeled = || SpanError::Unlabeled {
        id: format!("row {index}: {}", truncate(&row.text, 40)),
    };

    let global = match row.global_label {
        Some(g) => g,
        None => oracle.ok_or_else(unlabeled)?.score(&row.text)?,
    };
    let spans = match &row.span_labels {
        Some(labels) => {
            if labels.len() != n {
                return Err(SpanError::ShapeMismatch(format!(
                    "row {index}: {} span labels for {} spans",
                    labels.len(),
                    n
                )));
            }
            labels.clone()
        }
        None => {
            let oracle = oracle.ok_or_else(unlabeled)?;
            segmentation
                .spans
                .iter()
                .map(|span| oracle.score(&span.text))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    Ok(SpanTrainingSample::from_labels(
        row.text.clone(),
        global,
        spans,
        policy,
    ))
}

fn truncate(text: &str, limit: usize) -> String {
    if text.len() <= limit {
        text.to_string()
    } else {
        let mut end = limit;
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &text[..end])
    }
}

fn holdout_accuracy(
    model: &SpanCnnModel,
    holdout: &[&PreparedSample],
) -> (Option<f64>, Option<f64>) {
    if holdout.is_empty() {
        return (None, None);
    }
    let mut span_hits = 0usize;
    let mut span_total = 0usize;
    let mut inst_hits = 0usize;
    for p in holdout {
        let trace = model.forward(&p.segmentation);
        if (trace.outputs.global >= 0.5) == (p.sample.global_label >= 0.5) {
            inst_hits += 1;
        }
        for (score, label) in trace.outputs.span_scores.iter().zip(&p.sample.span_labels) {
            if (*score >= 0.5) == (*label >= 0.5) {
                span_hits += 1;
            }
            span_total += 1;
        }
    }
    (
        Some(span_hits as f64 / span_total.max(1) as f64),
        Some(inst_hits as f64 / holdout.len() as f64),
    )
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Loss gradients for one sample, as named tensors matching
/// [`SpanCnnModel::tensor_names`]; exposed for gradient checking and
/// optimizer diagnostics.
pub struct Gradients {
    params: Params,
}

impl Gradients {
    pub fn named_tensors(&self) -> Vec<(&'static str, &[f64])> {
        self.params
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.as_slice()))
            .collect()
    }
}

/// Gradients of the joint loss at the model's current parameters.
pub fn loss_gradients(
    model: &SpanCnnModel,
    segmentation: &SpanSegmentation,
    sample: &SpanTrainingSample,
) -> Gradients {
    let trace = model.forward(segmentation);
    Gradients {
        params: backward(model, &trace, sample),
    }
}

/// Gradients of the joint loss for one sample with respect to every
/// parameter. Verified against central finite differences in the tests.
// Index loops keep the kernels aligned with the forward-pass math.
#[allow(clippy::needless_range_loop)]
pub(crate) fn backward(
    model: &SpanCnnModel,
    trace: &ForwardTrace,
    sample: &SpanTrainingSample,
) -> Params {
    let config = &model.config;
    let (d, h_dim, c_dim, f_dim, k) = (
        config.embed_dim,
        config.hidden_dim,
        config.conv_channels,
        config.ffn_hidden,
        config.k,
    );
    let m = trace.ids.len();
    let window = k * h_dim;
    let mut g = SpanCnnModel::zeroed(config.clone()).params;

    // dL/da for the sigmoid heads.
    let d_a_global = trace.outputs.global - sample.global_label;
    let mut d_hidden = vec![vec![0.0; h_dim]; m];

    // Global head.
    g.bg[0] += d_a_global;
    for r in 0..h_dim {
        g.wg[r] += d_a_global * trace.pooled[r];
        let dg = d_a_global * model.params.wg[r] / m as f64;
        for state in d_hidden.iter_mut() {
            state[r] += dg;
        }
    }

    // Span heads, feed-forward, and convolution.
    for (j, &(start, end)) in trace.spans.iter().enumerate() {
        let alpha = sample.span_weights[j];
        let d_a_span = alpha * (trace.outputs.span_scores[j] - sample.span_labels[j]);
        let u = &trace.ffn[j];
        let z = &trace.conv[j];

        g.bs[0] += d_a_span;
        let mut d_pre_f = vec![0.0; f_dim];
        for r in 0..f_dim {
            g.ws[r] += d_a_span * u[r];
            d_pre_f[r] = d_a_span * model.params.ws[r] * (1.0 - u[r] * u[r]);
        }

        let mut d_z = vec![0.0; c_dim];
        for r in 0..f_dim {
            g.bf[r] += d_pre_f[r];
            let w_row = &model.params.wf[r * c_dim..(r + 1) * c_dim];
            let g_row = &mut g.wf[r * c_dim..(r + 1) * c_dim];
            for i in 0..c_dim {
                g_row[i] += d_pre_f[r] * z[i];
                d_z[i] += w_row[i] * d_pre_f[r];
            }
        }

        let mut v = vec![0.0; window];
        for (slot, t) in (start..end).enumerate() {
            v[slot * h_dim..(slot + 1) * h_dim].copy_from_slice(&trace.hidden[t]);
        }
        let mut d_v = vec![0.0; window];
        for r in 0..c_dim {
            let d_pre_c = d_z[r] * (1.0 - z[r] * z[r]);
            g.bc[r] += d_pre_c;
            let w_row = &model.params.wc[r * window..(r + 1) * window];
            let g_row = &mut g.wc[r * window..(r + 1) * window];
            for i in 0..window {
                g_row[i] += d_pre_c * v[i];
                d_v[i] += w_row[i] * d_pre_c;
            }
        }
        for (slot, t) in (start..end).enumerate() {
            for r in 0..h_dim {
                d_hidden[t][r] += d_v[slot * h_dim + r];
            }
        }
    }

    // Encoder layer and embeddings.
    let mut d_context = vec![0.0; d];
    let mut d_embed_rows = vec![vec![0.0; d]; m];
    for t in 0..m {
        let id = trace.ids[t];
        let e = &model.params.embed[id * d..(id + 1) * d];
        for r in 0..h_dim {
            let h = trace.hidden[t][r];
            let d_pre1 = d_hidden[t][r] * (1.0 - h * h);
            g.b1[r] += d_pre1;
            let w_row = &model.params.w1[r * d..(r + 1) * d];
            let u_row = &model.params.u1[r * d..(r + 1) * d];
            let gw_row = &mut g.w1[r * d..(r + 1) * d];
            for i in 0..d {
                gw_row[i] += d_pre1 * e[i];
                d_embed_rows[t][i] += w_row[i] * d_pre1;
                d_context[i] += u_row[i] * d_pre1;
            }
            let gu_row = &mut g.u1[r * d..(r + 1) * d];
            for i in 0..d {
                gu_row[i] += d_pre1 * trace.context[i];
            }
        }
    }
    // The context vector is the mean embedding, so its gradient spreads
    // uniformly over tokens.
    for row in d_embed_rows.iter_mut() {
        for i in 0..d {
            row[i] += d_context[i] / m as f64;
        }
    }
    for (t, row) in d_embed_rows.iter().enumerate() {
        let id = trace.ids[t];
        let target = &mut g.embed[id * d..(id + 1) * d];
        for i in 0..d {
            target[i] += row[i];
        }
    }

    g
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    m: Params,
    v: Params,
}

impl Optimizer {
    fn new(model: &SpanCnnModel, config: &OptimizerConfig) -> Self {
        Self {
            config: config.clone(),
            step: 0,
            m: SpanCnnModel::zeroed(model.config.clone()).params,
            v: SpanCnnModel::zeroed(model.config.clone()).params,
        }
    }

    fn step(&mut self, params: &mut Params, grads: &Params) {
        match self.config.algorithm {
            Algorithm::Sgd => {
                let lr = self.config.learning_rate;
                for ((_, p), (_, g)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= lr * gi;
                    }
                }
            }
            Algorithm::Adam => {
                const BETA1: f64 = 0.9;
                const BETA2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.step += 1;
                let lr = self.config.learning_rate;
                let bias1 = 1.0 - BETA1.powi(self.step as i32);
                let bias2 = 1.0 - BETA2.powi(self.step as i32);
                for ((((_, p), (_, g)), (_, m)), (_, v)) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(self.m.tensors_mut())
                    .zip(self.v.tensors_mut())
                {
                    for i in 0..p.len() {
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                        let m_hat = m[i] / bias1;
                        let v_hat = v[i] / bias2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
                    }
                }
            }
        }
    }
}
