//! Training loop: positive construction, dictionary-backed InfoNCE and Adam.

mod adam;
mod config;
mod log;

pub use self::adam::Adam;
pub use self::config::{apply_override, DonorMode, OptimizerConfig, PositiveKind, RunConfig, Seeds};
pub use self::log::{EpochRecord, Instrumentation, TrainLog};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::compose::{augment, swap_background, swap_texture, FloatImage};
use crate::error::{CladError, Result};
use crate::negdict::{FeatureEntry, NegativeDictionary, NegativeMode};
use crate::netcore::{total_loss, Architecture, Encoder, Grads, HeadOutputs, ImageBatch, LossConfig, TotalLoss};
use crate::rng::{derive_seed, stream, tag};
use crate::scalar::Scalar;
use crate::synthgen::{make_variant, Sample, Variant, VariantSet};

/// Loss value and parameter gradients for one batch.
#[derive(Debug)]
pub struct Objective<T> {
    pub loss: TotalLoss,
    pub grads: Grads<T>,
    /// Positive features (`batch x feature_dim`), empty when positives are unused.
    pub positive_features: Vec<f64>,
}

fn head_outputs<T: Scalar>(features: &[T], logits: &[T], rows: std::ops::Range<usize>, d: usize, c: usize) -> HeadOutputs {
    HeadOutputs {
        batch: rows.len(),
        feature_dim: d,
        num_classes: c,
        features: features[rows.start * d..rows.end * d].iter().map(|v| v.as_f64()).collect(),
        logits: logits[rows.start * c..rows.end * c].iter().map(|v| v.as_f64()).collect(),
    }
}

/// Forward anchors and positives as one batch, evaluate the loss and
/// backpropagate through both branches.
pub fn batch_objective<T: Scalar, N: AsRef<[f64]>>(
    model: &Encoder<T>,
    cfg: &LossConfig,
    anchors: &ImageBatch<T>,
    positives: Option<&ImageBatch<T>>,
    negatives: &[Vec<N>],
    labels: &[usize],
) -> Result<Objective<T>> {
    let b = anchors.n;
    let positives = if cfg.uses_positives() { positives } else { None };
    let joined;
    let input = match positives {
        Some(p) => {
            if p.n != b || p.size != anchors.size || p.channels != anchors.channels {
                return Err(CladError::Contract("positive batch does not match anchors".into()));
            }
            let mut data = anchors.data.clone();
            data.extend_from_slice(&p.data);
            joined = ImageBatch {
                n: 2 * b,
                channels: anchors.channels,
                size: anchors.size,
                data,
            };
            &joined
        }
        None => anchors,
    };
    let fwd = model.forward(input)?;
    let (d, c) = (model.arch().feature_dim(), model.arch().num_classes);
    let a_out = head_outputs(&fwd.features, &fwd.logits, 0..b, d, c);
    let p_out = positives.map(|_| head_outputs(&fwd.features, &fwd.logits, b..2 * b, d, c));
    let loss = total_loss(cfg, &a_out, p_out.as_ref(), negatives, labels)?;

    let to_t = |v: &[f64]| v.iter().map(|&x| T::from_f64_lossy(x)).collect::<Vec<T>>();
    let mut d_feat = to_t(&loss.d_anchor_features);
    let mut d_logit = to_t(&loss.d_anchor_logits);
    if p_out.is_some() {
        if loss.d_positive_features.is_empty() {
            d_feat.extend(std::iter::repeat_n(T::zero(), b * d));
            d_logit.extend(std::iter::repeat_n(T::zero(), b * c));
        } else {
            d_feat.extend(to_t(&loss.d_positive_features));
            d_logit.extend(to_t(&loss.d_positive_logits));
        }
    }
    let (grads, _) = model.backward(&fwd.cache, &d_feat, &d_logit, false)?;
    Ok(Objective {
        loss,
        grads,
        positive_features: p_out.map_or(Vec::new(), |p| p.features),
    })
}

/// A trained model with its log and final dictionary.
#[derive(Debug)]
pub struct TrainOutput<T> {
    pub model: Encoder<T>,
    pub log: TrainLog,
    pub dictionary: NegativeDictionary,
}

/// Background-only renders of the training split, indexed by background class.
struct DonorBank {
    set: VariantSet,
    by_class: Vec<Vec<usize>>,
}

impl DonorBank {
    fn build(train: &VariantSet, seed: u64) -> Result<Self> {
        let set = make_variant(train, Variant::OnlyBgT, seed)?;
        let mut by_class = vec![Vec::new(); set.num_classes];
        for (i, s) in set.samples.iter().enumerate() {
            by_class[s.bg_label].push(i);
        }
        Ok(DonorBank { set, by_class })
    }

    /// Uniform over bank entries whose background class differs from `class`.
    fn pick(&self, class: usize, rng: &mut crate::rng::Rng) -> Result<&Sample> {
        let eligible = self.set.len() - self.by_class[class].len();
        if eligible == 0 {
            return Err(CladError::Invariant(format!("no donor background outside class {class}")));
        }
        let mut r = rng.random_range(0..eligible);
        for (k, members) in self.by_class.iter().enumerate() {
            if k == class {
                continue;
            }
            if r < members.len() {
                return Ok(&self.set.samples[members[r]]);
            }
            r -= members.len();
        }
        unreachable!("index within eligible count")
    }
}

fn locate(err: CladError, epoch: usize, batch: usize) -> CladError {
    match err {
        CladError::Numeric { location, detail } => CladError::Numeric {
            location: format!("epoch {epoch} batch {batch}: {location}"),
            detail,
        },
        other => other,
    }
}

struct Trainer<'a> {
    cfg: &'a RunConfig,
    train: &'a VariantSet,
}

impl Trainer<'_> {
    /// Build one positive and return it with the class of the swapped-in cue.
    fn positive(&self, anchor: &Sample, batch: &[&Sample], bank: Option<&DonorBank>, epoch: usize) -> Result<(Sample, usize)> {
        let cfg = self.cfg;
        let y = anchor.fg_label;
        let mut rng = stream(cfg.seeds.data, &[tag("donor"), epoch as u64, anchor.id]);
        match cfg.positive_kind {
            crate::trainer::PositiveKind::Texture => {
                let c = self.train.num_classes;
                let mut k = rng.random_range(0..c - 1);
                if k >= y {
                    k += 1;
                }
                let seed = derive_seed(cfg.seeds.data, &[tag("texture-swap"), epoch as u64]);
                Ok((swap_texture(anchor, k, &cfg.dataset, seed)?, k))
            }
            crate::trainer::PositiveKind::Background => {
                let in_batch: Vec<&&Sample> = match cfg.donor_mode {
                    DonorMode::InBatch => batch.iter().filter(|s| s.bg_label != y).collect(),
                    DonorMode::Bank => Vec::new(),
                };
                let donor = if in_batch.is_empty() {
                    bank.expect("bank built whenever positives are used").pick(y, &mut rng)?
                } else {
                    in_batch[rng.random_range(0..in_batch.len())]
                };
                let pos = swap_background(anchor, donor)?;
                let cue = pos.bg_label;
                Ok((pos, cue))
            }
        }
    }
}

/// Train a fresh model on an `Original` training split.
pub fn train<T: Scalar>(cfg: &RunConfig, train_set: &VariantSet) -> Result<TrainOutput<T>> {
    cfg.validate()?;
    train_set.validate()?;
    if train_set.variant != Variant::Original {
        return Err(CladError::Invariant(format!("training expects Original data, got {}", train_set.variant)));
    }
    if train_set.is_empty() {
        return Err(CladError::Config("empty training set".into()));
    }
    let arch = Architecture {
        in_channels: 3,
        widths: cfg.widths,
        num_classes: train_set.num_classes,
    };
    let mut model = Encoder::<T>::new(arch, cfg.seeds.init)?;
    let mut adam = Adam::new(model.params(), cfg.optimizer.beta1, cfg.optimizer.beta2, cfg.optimizer.eps);
    let mut dict = NegativeDictionary::new(train_set.num_classes, cfg.queue_size)?;
    let mut log = TrainLog::new(cfg);
    let trainer = Trainer { cfg, train: train_set };
    let use_pos = cfg.loss.uses_positives();
    let use_con = cfg.loss.uses_contrastive();
    let n = train_set.len();

    for epoch in 0..cfg.epochs {
        let lr = cfg.optimizer.lr_at(epoch);
        let bank = if use_pos && cfg.positive_kind == PositiveKind::Background {
            Some(DonorBank::build(train_set, derive_seed(cfg.seeds.data, &[tag("bank"), epoch as u64]))?)
        } else {
            None
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seeds.data, &[tag("order"), epoch as u64]));
        let (mut class_sum, mut con_sum) = (0.0, 0.0);

        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &train_set.samples[i]).collect();
            let labels: Vec<usize> = samples.iter().map(|s| s.fg_label).collect();
            let e = epoch as u64;

            // 1-2: positives and augmentation
            let anchor_imgs: Vec<FloatImage> = samples
                .par_iter()
                .map(|s| augment(&FloatImage::from(&s.image), &cfg.augment, derive_seed(cfg.seeds.augment, &[tag("anchor"), e, s.id])))
                .collect();
            let positives: Vec<(FloatImage, usize)> = if use_pos {
                samples
                    .par_iter()
                    .map(|s| {
                        let (p, cue) = trainer.positive(s, &samples, bank.as_ref(), epoch)?;
                        let seed = derive_seed(cfg.seeds.augment, &[tag("positive"), e, s.id]);
                        Ok((augment(&FloatImage::from(&p.image), &cfg.augment, seed), cue))
                    })
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            log.counters.positives_built += positives.len() as u64;
            let anchor_batch = ImageBatch::<T>::from_images(&anchor_imgs);
            let pos_batch = use_pos.then(|| ImageBatch::<T>::from_images(positives.iter().map(|(p, _)| p)));

            // 3-4: negatives
            let drawn = if use_con {
                let mut lists = Vec::with_capacity(samples.len());
                match cfg.negative_mode {
                    NegativeMode::Keyed => {
                        for &y in &labels {
                            lists.push(dict.draw(y, NegativeMode::Keyed, 0)?);
                        }
                    }
                    NegativeMode::Trivial => {
                        let seed = derive_seed(cfg.seeds.data, &[tag("trivial"), e, bi as u64]);
                        let shared = dict.draw(0, NegativeMode::Trivial, seed)?;
                        lists.resize(samples.len(), shared);
                    }
                }
                log.counters.dictionary_draws += lists.len() as u64;
                lists
            } else {
                vec![Vec::new(); samples.len()]
            };
            let negatives: Vec<Vec<&[f64]>> = drawn
                .iter()
                .map(|l| l.iter().map(|f| f.embedding.as_slice()).collect())
                .collect();

            // 5-6: loss, backward, update
            let obj = batch_objective(&model, &cfg.loss, &anchor_batch, pos_batch.as_ref(), &negatives, &labels)
                .map_err(|err| locate(err, epoch, bi))?;
            adam.step(model.params_mut(), &obj.grads, lr).map_err(|err| locate(err, epoch, bi))?;

            // 7: enqueue detached positive features
            if use_con {
                let d = model.arch().feature_dim();
                for (i, &y) in labels.iter().enumerate() {
                    let f = &obj.positive_features[i * d..][..d];
                    if f.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    dict.enqueue(FeatureEntry::new(f.to_vec(), y, positives[i].1))?;
                    log.counters.dictionary_enqueues += 1;
                }
            }

            let w = samples.len() as f64;
            class_sum += obj.loss.class_term * w;
            con_sum += obj.loss.con_term * w;
            log.counters.batches += 1;
            log.counters.contrastive_evaluations += obj.loss.contrastive_evaluations as u64;
            log.counters.positive_class_evaluations += obj.loss.positive_class_evaluations as u64;
            log.counters.warmup_anchors += obj.loss.warmup as u64;
            log.counters.degenerate_anchors += obj.loss.degenerate as u64;
            log.occupancy_trace.push(dict.total());
        }

        let rec = EpochRecord {
            epoch,
            mean_class_loss: class_sum / n as f64,
            mean_con_loss: con_sum / n as f64,
            lr,
            dict_occupancy: dict.total(),
        };
        ::log::info!(
            "epoch {} lr {} class {:.4} con {:.4} dict {}",
            rec.epoch,
            rec.lr,
            rec.mean_class_loss,
            rec.mean_con_loss,
            rec.dict_occupancy
        );
        log.epochs.push(rec);
    }
    Ok(TrainOutput { model, log, dictionary: dict })
}
