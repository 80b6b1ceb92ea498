//! Classification and contrastive objectives.
//!
//! All loss arithmetic runs in `f64` whatever the network precision.

use serde::{Deserialize, Serialize};

use crate::error::{CladError, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; errors on a zero-norm (or non-finite) input.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CladError::Contract("cosine_sim on vectors of different length".into()));
    }
    let (na, nb) = (norm(a), norm(b));
    if !(na > 0.0 && nb > 0.0 && na.is_finite() && nb.is_finite()) {
        return Err(CladError::UndefinedSimilarity);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Similarity and its gradients with respect to both arguments.
fn cosine_with_grads(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let s = cosine_sim(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    let inv = 1.0 / (na * nb);
    let ga = a.iter().zip(b).map(|(x, y)| y * inv - s * x / (na * na)).collect();
    let gb = a.iter().zip(b).map(|(x, y)| x * inv - s * y / (nb * nb)).collect();
    Ok((s, ga, gb))
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNce {
    pub loss: f64,
    /// Set when no negatives were available and the term was skipped.
    pub warmup: bool,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
}

/// (N+1)-way cross-entropy of the positive against `negatives` on cosine
/// similarities scaled by `1/tau`.
///
/// Negatives are constants: no gradient is produced for them.
pub fn info_nce<N: AsRef<[f64]>>(anchor: &[f64], positive: &[f64], negatives: &[N], tau: f64) -> Result<InfoNce> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(CladError::Config(format!("temperature must be positive, got {tau}")));
    }
    if negatives.is_empty() {
        return Ok(InfoNce {
            loss: 0.0,
            warmup: true,
            grad_anchor: vec![0.0; anchor.len()],
            grad_positive: vec![0.0; positive.len()],
        });
    }
    let (s_pos, ga_pos, gp) = cosine_with_grads(anchor, positive)?;
    let mut z = Vec::with_capacity(negatives.len() + 1);
    z.push(s_pos / tau);
    let mut neg_grads = Vec::with_capacity(negatives.len());
    for n in negatives {
        let (s, ga, _) = cosine_with_grads(anchor, n.as_ref())?;
        z.push(s / tau);
        neg_grads.push(ga);
    }
    let lse = log_sum_exp(&z);
    let loss = lse - z[0];
    // dL/dz_j = softmax_j - [j == positive]
    let p: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
    let w_pos = (p[0] - 1.0) / tau;
    let mut grad_anchor: Vec<f64> = ga_pos.iter().map(|g| w_pos * g).collect();
    for (pj, ga) in p[1..].iter().zip(&neg_grads) {
        let w = pj / tau;
        for (acc, g) in grad_anchor.iter_mut().zip(ga) {
            *acc += w * g;
        }
    }
    let grad_positive = gp.iter().map(|g| w_pos * g).collect();
    Ok(InfoNce {
        loss,
        warmup: false,
        grad_anchor,
        grad_positive,
    })
}

/// `-log softmax(logits)[label]` with its gradient `softmax - onehot`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(CladError::Contract(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let lse = log_sum_exp(logits);
    let mut grad: Vec<f64> = logits.iter().map(|v| (v - lse).exp()).collect();
    grad[label] -= 1.0;
    Ok((lse - logits[label], grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Cross-entropy on anchors only.
    Baseline,
    /// Cross-entropy on anchors plus the weighted contrastive term.
    Clad,
    /// As `Clad`, plus cross-entropy on the background-swapped positives.
    CladPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub variant: LossVariant,
    pub lambda: f64,
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            variant: LossVariant::Clad,
            lambda: 1.0,
            tau: 0.2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(CladError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CladError::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Whether the contrastive term contributes at all.
    pub fn uses_contrastive(&self) -> bool {
        self.variant != LossVariant::Baseline && self.lambda > 0.0
    }

    /// Whether positives must be built (for the contrastive term or the CLAD+ class term).
    pub fn uses_positives(&self) -> bool {
        self.uses_contrastive() || self.variant == LossVariant::CladPlus
    }
}

/// Per-batch network outputs in `f64`: `batch x dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub batch: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
}

impl HeadOutputs {
    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..][..self.feature_dim]
    }

    pub fn logit_row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.num_classes..][..self.num_classes]
    }
}

/// Batch loss value with gradients for both branches.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    /// Mean classification term (anchor + positive for CLAD+).
    pub class_term: f64,
    /// Mean contrastive term, before weighting.
    pub con_term: f64,
    pub d_anchor_features: Vec<f64>,
    pub d_anchor_logits: Vec<f64>,
    pub d_positive_features: Vec<f64>,
    pub d_positive_logits: Vec<f64>,
    /// Anchors whose contrastive term was skipped for lack of negatives.
    pub warmup: usize,
    /// Anchors skipped because an anchor or positive feature had zero norm.
    pub degenerate: usize,
    pub positive_class_evaluations: usize,
    pub contrastive_evaluations: usize,
}

/// Combine the objectives of one batch.
///
/// `negatives[i]` are the drawn negatives for anchor `i`. Both terms are
/// averaged over the batch before weighting.
pub fn total_loss<N: AsRef<[f64]>>(
    cfg: &LossConfig,
    anchors: &HeadOutputs,
    positives: Option<&HeadOutputs>,
    negatives: &[Vec<N>],
    labels: &[usize],
) -> Result<TotalLoss> {
    cfg.validate()?;
    let b = anchors.batch;
    if labels.len() != b || b == 0 {
        return Err(CladError::Contract(format!("{} labels for a batch of {b}", labels.len())));
    }
    let needs_pos = cfg.uses_positives();
    let positives = match (needs_pos, positives) {
        (true, None) => {
            return Err(CladError::Contract(format!(
                "{:?} with lambda {} requires positive outputs",
                cfg.variant, cfg.lambda
            )))
        }
        (true, Some(p)) if p.batch != b => {
            return Err(CladError::Contract("positive batch size differs from anchors".into()))
        }
        (_, p) => p,
    };
    let inv_b = 1.0 / b as f64;

    let mut out = TotalLoss {
        value: 0.0,
        class_term: 0.0,
        con_term: 0.0,
        d_anchor_features: vec![0.0; anchors.features.len()],
        d_anchor_logits: vec![0.0; anchors.logits.len()],
        d_positive_features: positives.map_or(Vec::new(), |p| vec![0.0; p.features.len()]),
        d_positive_logits: positives.map_or(Vec::new(), |p| vec![0.0; p.logits.len()]),
        warmup: 0,
        degenerate: 0,
        positive_class_evaluations: 0,
        contrastive_evaluations: 0,
    };

    let nc = anchors.num_classes;
    let mut class_sum = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let (l, g) = cross_entropy(anchors.logit_row(i), y)?;
        class_sum += l;
        for (d, gv) in out.d_anchor_logits[i * nc..][..nc].iter_mut().zip(g) {
            *d = gv * inv_b;
        }
    }
    let mut class_term = class_sum * inv_b;

    if cfg.variant == LossVariant::CladPlus {
        let pos = positives.expect("checked above");
        let mut pos_sum = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let (l, g) = cross_entropy(pos.logit_row(i), y)?;
            pos_sum += l;
            out.positive_class_evaluations += 1;
            for (d, gv) in out.d_positive_logits[i * nc..][..nc].iter_mut().zip(g) {
                *d = gv * inv_b;
            }
        }
        class_term += pos_sum * inv_b;
    }
    out.class_term = class_term;
    out.value = class_term;

    if cfg.uses_contrastive() {
        let pos = positives.expect("checked above");
        if negatives.len() != b {
            return Err(CladError::Contract("one negative list per anchor required".into()));
        }
        let d = anchors.feature_dim;
        let scale = cfg.lambda * inv_b;
        let mut con_sum = 0.0;
        for i in 0..b {
            let r = match info_nce(anchors.feature(i), pos.feature(i), &negatives[i], cfg.tau) {
                Ok(r) => r,
                Err(CladError::UndefinedSimilarity)
                    if norm(anchors.feature(i)) == 0.0 || norm(pos.feature(i)) == 0.0 =>
                {
                    out.degenerate += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if r.warmup {
                out.warmup += 1;
                continue;
            }
            out.contrastive_evaluations += 1;
            con_sum += r.loss;
            for (dst, g) in out.d_anchor_features[i * d..][..d].iter_mut().zip(&r.grad_anchor) {
                *dst = g * scale;
            }
            for (dst, g) in out.d_positive_features[i * d..][..d].iter_mut().zip(&r.grad_positive) {
                *dst = g * scale;
            }
        }
        out.con_term = con_sum * inv_b;
        out.value = class_term + cfg.lambda * out.con_term;
    }
    Ok(out)
}
