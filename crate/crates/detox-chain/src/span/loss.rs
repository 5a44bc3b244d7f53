//! The re-weighted joint training loss.
//!
//! `total = global + span`, where the global term is the two-class
//! cross-entropy of the global prediction against its soft target and the
//! span term is the per-span cross-entropy weighted by each span's alpha.

use serde::{Deserialize, Serialize};

use super::model::ModelOutputs;
use super::SpanError;

/// Per-span re-weighting rule: toxic spans (label at or above the threshold)
/// carry a heavier weight than non-toxic ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaPolicy {
    pub toxic_weight: f64,
    pub non_toxic_weight: f64,
    pub threshold: f64,
}

impl Default for AlphaPolicy {
    fn default() -> Self {
        Self {
            toxic_weight: 2.0,
            non_toxic_weight: 1.0,
            threshold: 0.5,
        }
    }
}

impl AlphaPolicy {
    pub fn weight(&self, span_label: f64) -> f64 {
        if span_label >= self.threshold {
            self.toxic_weight
        } else {
            self.non_toxic_weight
        }
    }
}

/// One labeled training text: global toxicity, per-span toxicity, and the
/// per-span weights. Labels are soft values in [0, 1]; weights are positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanTrainingSample {
    pub text: String,
    pub global_label: f64,
    pub span_labels: Vec<f64>,
    pub span_weights: Vec<f64>,
}

impl SpanTrainingSample {
    /// Builds a sample, deriving weights from the alpha policy.
    pub fn from_labels(
        text: impl Into<String>,
        global_label: f64,
        span_labels: Vec<f64>,
        policy: &AlphaPolicy,
    ) -> Self {
        debug_assert!((0.0..=1.0).contains(&global_label), "label out of range");
        debug_assert!(span_labels.iter().all(|l| (0.0..=1.0).contains(l)));
        let span_weights = span_labels.iter().map(|&l| policy.weight(l)).collect();
        Self {
            text: text.into(),
            global_label,
            span_labels,
            span_weights,
        }
    }

    /// Snaps all labels to {0, 1} at 0.5, keeping weights consistent.
    pub fn binarized(mut self, policy: &AlphaPolicy) -> Self {
        let snap = |v: f64| if v >= 0.5 { 1.0 } else { 0.0 };
        self.global_label = snap(self.global_label);
        for label in &mut self.span_labels {
            *label = snap(*label);
        }
        self.span_weights = self.span_labels.iter().map(|&l| policy.weight(l)).collect();
        self
    }
}

/// The loss split into its two terms; `total` is exactly their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub global_term: f64,
    pub span_term: f64,
}

const CE_EPSILON: f64 = 1e-12;

/// Two-class cross-entropy of probability `p` against soft target `t`:
/// `-(t ln p + (1 - t) ln(1 - p))`.
pub fn cross_entropy(p: f64, t: f64) -> f64 {
    let p = p.clamp(CE_EPSILON, 1.0 - CE_EPSILON);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

/// Computes the loss breakdown for one sample's outputs.
pub fn compute_loss(
    outputs: &ModelOutputs,
    sample: &SpanTrainingSample,
) -> Result<LossBreakdown, SpanError> {
    if outputs.span_scores.len() != sample.span_labels.len() {
        return Err(SpanError::ShapeMismatch(format!(
            "{} span scores vs {} span labels",
            outputs.span_scores.len(),
            sample.span_labels.len()
        )));
    }
    if sample.span_labels.len() != sample.span_weights.len() {
        return Err(SpanError::ShapeMismatch(format!(
            "{} span labels vs {} span weights",
            sample.span_labels.len(),
            sample.span_weights.len()
        )));
    }
    let global_term = cross_entropy(outputs.global, sample.global_label);
    let span_term = outputs
        .span_scores
        .iter()
        .zip(&sample.span_labels)
        .zip(&sample.span_weights)
        .map(|((&p, &t), &alpha)| alpha * cross_entropy(p, t))
        .sum();
    Ok(LossBreakdown {
        total: global_term + span_term,
        global_term,
        span_term,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(global: f64, labels: &[f64], weights: &[f64]) -> SpanTrainingSample {
        SpanTrainingSample {
            text: String::new(),
            global_label: global,
            span_labels: labels.to_vec(),
            span_weights: weights.to_vec(),
        }
    }

    #[test]
    fn hard_targets_with_near_perfect_predictions_vanish() {
        // For labels in {0,1} and prediction probability 1 - eps, the loss
        // tends to zero as eps does.
        let mut last = f64::INFINITY;
        for eps in [1e-2, 1e-4, 1e-6, 1e-8] {
            let outputs = ModelOutputs {
                global: 1.0 - eps,
                span_scores: vec![eps],
            };
            let s = sample(1.0, &[0.0], &[1.0]);
            let loss = compute_loss(&outputs, &s).unwrap();
            assert!(loss.total < last);
            last = loss.total;
        }
        assert!(last < 1e-7);
    }

    #[test]
    fn predictions_equal_to_soft_targets_hit_the_entropy_floor() {
        // Soft-target CE is minimized at p = t, where it equals the target's
        // own entropy.
        let t: f64 = 0.3;
        let entropy = -(t * t.ln() + (1.0 - t) * (1.0 - t).ln());
        let outputs = ModelOutputs {
            global: t,
            span_scores: vec![],
        };
        let s = sample(t, &[], &[]);
        let loss = compute_loss(&outputs, &s).unwrap();
        assert!((loss.global_term - entropy).abs() < 1e-12);
        for delta in [-0.1, 0.1] {
            let off = ModelOutputs {
                global: t + delta,
                span_scores: vec![],
            };
            assert!(compute_loss(&off, &s).unwrap().global_term > loss.global_term);
        }
    }

    #[test]
    fn alpha_weighting_triples_equal_span_terms() {
        // Two spans with identical per-span CE value c, weighted 2 and 1,
        // contribute 3c; the global term is zeroed out by a perfect match.
        let outputs = ModelOutputs {
            global: 1.0 - 1e-15,
            span_scores: vec![0.8, 0.8],
        };
        let s = sample(1.0, &[1.0, 1.0], &[2.0, 1.0]);
        let loss = compute_loss(&outputs, &s).unwrap();
        let c = cross_entropy(0.8, 1.0);
        assert!((loss.span_term - 3.0 * c).abs() < 1e-12);
        assert!(loss.global_term < 1e-12);
    }

    #[test]
    fn total_is_exactly_the_sum_of_terms() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(21);
        for _ in 0..500 {
            let n = rng.gen_range(0..8);
            let outputs = ModelOutputs {
                global: rng.gen(),
                span_scores: (0..n).map(|_| rng.gen()).collect(),
            };
            let s = sample(
                rng.gen(),
                &(0..n).map(|_| rng.gen()).collect::<Vec<f64>>(),
                &(0..n)
                    .map(|_| rng.gen_range(0.1..3.0))
                    .collect::<Vec<f64>>(),
            );
            let loss = compute_loss(&outputs, &s).unwrap();
            assert!((loss.total - (loss.global_term + loss.span_term)).abs() <= 1e-9);
        }
    }

    #[test]
    fn raising_alpha_on_a_lossy_span_raises_the_span_term() {
        let outputs = ModelOutputs {
            global: 0.5,
            span_scores: vec![0.4],
        };
        let low = sample(0.5, &[1.0], &[1.0]);
        let high = sample(0.5, &[1.0], &[1.5]);
        let l = compute_loss(&outputs, &low).unwrap();
        let h = compute_loss(&outputs, &high).unwrap();
        assert!(h.span_term > l.span_term);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let outputs = ModelOutputs {
            global: 0.5,
            span_scores: vec![0.5, 0.5],
        };
        let s = sample(0.5, &[1.0], &[1.0]);
        assert!(matches!(
            compute_loss(&outputs, &s),
            Err(SpanError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn default_alpha_policy_matches_the_reweighting_rule() {
        let policy = AlphaPolicy::default();
        assert_eq!(policy.weight(0.9), 2.0);
        assert_eq!(policy.weight(0.5), 2.0);
        assert_eq!(policy.weight(0.1), 1.0);
    }
}
