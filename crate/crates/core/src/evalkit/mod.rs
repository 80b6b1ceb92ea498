//! Measurements of accuracy and background reliance.

mod report;
mod saliency;
mod sweep;

pub use report::{evaluate, EvalSuite, MetricsReport, VariantAccuracy};
pub use saliency::{smoothgrad, write_saliency, SaliencyMap, SmoothGradConfig};
pub use sweep::{ablation_sweep, SweepAxis, SweepRow, SweepTable};

use std::collections::HashMap;

use crate::compose::FloatImage;
use crate::error::{CladError, Result};
use crate::netcore::{cosine_sim, Classifier, ImageBatch};
use crate::scalar::Scalar;
use crate::synthgen::{Variant, VariantSet};

const EVAL_BATCH: usize = 128;

/// Features and logits for every image, in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub features: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

impl Outputs {
    pub fn predictions(&self) -> Result<Vec<usize>> {
        self.logits.iter().map(|l| argmax(l)).collect()
    }
}

/// Index of the first maximal entry; non-finite logits are a numeric fault.
pub fn argmax(logits: &[f64]) -> Result<usize> {
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(CladError::numeric("logits", "empty or non-finite logit vector"));
    }
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Run the model over `images` in fixed-size batches.
pub fn run_model<T: Scalar, M: Classifier<T> + ?Sized>(model: &M, images: &[FloatImage]) -> Result<Outputs> {
    let mut out = Outputs {
        features: Vec::with_capacity(images.len()),
        logits: Vec::with_capacity(images.len()),
    };
    let c = model.num_classes();
    for chunk in images.chunks(EVAL_BATCH) {
        let inf = model.infer(&ImageBatch::<T>::from_images(chunk))?;
        let d = inf.features.len() / chunk.len();
        for i in 0..chunk.len() {
            out.features.push(inf.features[i * d..][..d].iter().map(|v| v.as_f64()).collect());
            out.logits.push(inf.logits[i * c..][..c].iter().map(|v| v.as_f64()).collect());
        }
    }
    Ok(out)
}

fn set_images(set: &VariantSet) -> Vec<FloatImage> {
    set.samples.iter().map(|s| FloatImage::from(&s.image)).collect()
}

fn check_classes<T: Scalar, M: Classifier<T> + ?Sized>(model: &M, set: &VariantSet) -> Result<()> {
    if model.num_classes() != set.num_classes {
        return Err(CladError::Contract(format!(
            "model has {} classes, {} set has {}",
            model.num_classes(),
            set.variant,
            set.num_classes
        )));
    }
    if set.is_empty() {
        return Err(CladError::UndefinedMetric(format!("empty {} set", set.variant)));
    }
    Ok(())
}

/// Fraction of predictions equal to `labels`.
pub fn accuracy_from_predictions(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(CladError::UndefinedMetric(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Fraction of samples whose argmax logit is the foreground label.
pub fn accuracy<T: Scalar, M: Classifier<T> + ?Sized>(model: &M, set: &VariantSet) -> Result<f64> {
    check_classes(model, set)?;
    let preds = run_model(model, &set_images(set))?.predictions()?;
    let labels: Vec<usize> = set.samples.iter().map(|s| s.fg_label).collect();
    accuracy_from_predictions(&preds, &labels)
}

/// MixedSame accuracy minus MixedRand accuracy, in the units supplied.
pub fn bg_gap_from_accuracies(mixed_same: f64, mixed_rand: f64) -> f64 {
    mixed_same - mixed_rand
}

fn same_split(a: &VariantSet, b: &VariantSet) -> Result<()> {
    let mut ia = a.ids();
    let mut ib = b.ids();
    ia.sort_unstable();
    ib.sort_unstable();
    if ia != ib || a.num_classes != b.num_classes || a.image_size != b.image_size {
        return Err(CladError::Contract(format!(
            "{} and {} sets do not come from the same base split",
            a.variant, b.variant
        )));
    }
    Ok(())
}

pub fn bg_gap<T: Scalar, M: Classifier<T> + ?Sized>(model: &M, mixed_same: &VariantSet, mixed_rand: &VariantSet) -> Result<f64> {
    if mixed_same.variant != Variant::MixedSame || mixed_rand.variant != Variant::MixedRand {
        return Err(CladError::Contract(format!(
            "bg_gap expects MixedSame and MixedRand, got {} and {}",
            mixed_same.variant, mixed_rand.variant
        )));
    }
    same_split(mixed_same, mixed_rand)?;
    Ok(bg_gap_from_accuracies(accuracy(model, mixed_same)?, accuracy(model, mixed_rand)?))
}

/// `(a, b)` outputs aligned by sample id.
fn aligned_outputs<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    original: &VariantSet,
    changed: &VariantSet,
) -> Result<(Outputs, Outputs)> {
    check_classes(model, original)?;
    check_classes(model, changed)?;
    same_split(original, changed)?;
    let index: HashMap<u64, usize> = changed.samples.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    let a = run_model(model, &set_images(original))?;
    let b_raw = run_model(model, &set_images(changed))?;
    let order: Vec<usize> = original.samples.iter().map(|s| index[&s.id]).collect();
    let b = Outputs {
        features: order.iter().map(|&i| b_raw.features[i].clone()).collect(),
        logits: order.iter().map(|&i| b_raw.logits[i].clone()).collect(),
    };
    Ok((a, b))
}

/// Mean cosine similarity of paired features; pairs with a zero-norm member are excluded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSimilarity {
    pub mean: f64,
    pub excluded: usize,
}

pub fn feature_similarity_from_features(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<FeatureSimilarity> {
    if a.len() != b.len() {
        return Err(CladError::Contract("unaligned feature pairs".into()));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for (x, y) in a.iter().zip(b) {
        match cosine_sim(x, y) {
            Ok(c) => {
                sum += c;
                used += 1;
            }
            Err(CladError::UndefinedSimilarity) => {}
            Err(e) => return Err(e),
        }
    }
    let excluded = a.len() - used;
    if excluded > 0 {
        log::warn!("feature similarity: {excluded} zero-norm pairs excluded");
    }
    if used == 0 {
        return Err(CladError::UndefinedMetric("no pair with non-zero features".into()));
    }
    Ok(FeatureSimilarity {
        mean: sum / used as f64,
        excluded,
    })
}

pub fn feature_similarity<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    original: &VariantSet,
    changed: &VariantSet,
) -> Result<FeatureSimilarity> {
    let (a, b) = aligned_outputs(model, original, changed)?;
    feature_similarity_from_features(&a.features, &b.features)
}

/// Fraction of pairs with equal argmax predictions.
pub fn decision_consistency_from_logits(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(CladError::UndefinedMetric(format!("{} vs {} logit pairs", a.len(), b.len())));
    }
    let mut same = 0usize;
    for (x, y) in a.iter().zip(b) {
        if argmax(x)? == argmax(y)? {
            same += 1;
        }
    }
    Ok(same as f64 / a.len() as f64)
}

pub fn decision_consistency<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    original: &VariantSet,
    changed: &VariantSet,
) -> Result<f64> {
    let (a, b) = aligned_outputs(model, original, changed)?;
    decision_consistency_from_logits(&a.logits, &b.logits)
}

/// Accuracy on the full images and on the five crops, in points.
#[derive(Debug, Clone, PartialEq)]
pub struct CropDrop {
    pub full: f64,
    /// Top-left, top-right, bottom-left, bottom-right, center.
    pub crops: [f64; 5],
    /// Mean of `full - crop` over the five crops.
    pub mean_drop: f64,
}

/// Origins of the four corner crops and the center crop.
pub fn crop_origins(size: usize, side: usize) -> [(usize, usize); 5] {
    let far = size - side;
    [(0, 0), (far, 0), (0, far), (far, far), (far / 2, far / 2)]
}

pub fn corner_crop_drop<T: Scalar, M: Classifier<T> + ?Sized>(model: &M, set: &VariantSet) -> Result<CropDrop> {
    check_classes(model, set)?;
    let size = set.image_size;
    let side = size * 3 / 4;
    let labels: Vec<usize> = set.samples.iter().map(|s| s.fg_label).collect();
    let images = set_images(set);
    let full = 100.0 * accuracy_from_predictions(&run_model(model, &images)?.predictions()?, &labels)?;
    let mut crops = [0.0; 5];
    for (slot, (x0, y0)) in crops.iter_mut().zip(crop_origins(size, side)) {
        let cropped: Vec<FloatImage> = images.iter().map(|im| im.crop(x0, y0, side).resize(size)).collect();
        *slot = 100.0 * accuracy_from_predictions(&run_model(model, &cropped)?.predictions()?, &labels)?;
    }
    let mean_drop = crops.iter().map(|c| full - c).sum::<f64>() / 5.0;
    Ok(CropDrop { full, crops, mean_drop })
}
