//! Behavioural checks of the training loop on a tiny benchmark.

use clad::netcore::{checkpoint, LossVariant};
use clad::synthgen::{gen_base, split_train_test, DatasetSpec, VariantSet};
use clad::trainer::{train, DonorMode, PositiveKind, RunConfig};
use clad::CladError;

fn tiny() -> (RunConfig, VariantSet) {
    let spec = DatasetSpec {
        samples_per_class: 12,
        image_size: 16,
        ..DatasetSpec::default()
    };
    let (train_set, _) = split_train_test(&gen_base(&spec).unwrap(), &spec).unwrap();
    let mut cfg = RunConfig {
        epochs: 2,
        batch_size: 16,
        queue_size: 4,
        widths: [4, 6, 8],
        dataset: spec,
        ..RunConfig::default()
    };
    cfg.optimizer.decay_epoch = 1;
    (cfg, train_set)
}

#[test]
fn baseline_builds_no_positives_and_never_touches_the_dictionary() {
    let (mut cfg, set) = tiny();
    cfg.loss.variant = LossVariant::Baseline;
    let out = train::<f32>(&cfg, &set).unwrap();
    let c = &out.log.counters;
    assert_eq!(c.positives_built, 0);
    assert_eq!(c.dictionary_draws + c.dictionary_enqueues + c.contrastive_evaluations, 0);
    assert_eq!(out.dictionary.total(), 0);
}

#[test]
fn clad_uses_contrastive_term_without_positive_classification() {
    let (cfg, set) = tiny();
    let out = train::<f32>(&cfg, &set).unwrap();
    let c = &out.log.counters;
    let n = (set.len() * cfg.epochs) as u64;
    assert_eq!(c.positives_built, n);
    assert_eq!(c.positive_class_evaluations, 0);
    assert_eq!(c.dictionary_draws, n);
    assert_eq!(c.contrastive_evaluations + c.warmup_anchors + c.degenerate_anchors, n);
    assert!(c.warmup_anchors > 0, "first batch has an empty dictionary");
    assert!(c.contrastive_evaluations > 0);
}

#[test]
fn clad_plus_classifies_positives_too() {
    let (mut cfg, set) = tiny();
    cfg.loss.variant = LossVariant::CladPlus;
    let out = train::<f32>(&cfg, &set).unwrap();
    let n = (set.len() * cfg.epochs) as u64;
    assert_eq!(out.log.counters.positive_class_evaluations, n);
    assert!(out.log.counters.contrastive_evaluations > 0);
}

#[test]
fn dictionary_fills_monotonically_up_to_capacity() {
    let (cfg, set) = tiny();
    let out = train::<f32>(&cfg, &set).unwrap();
    let trace = &out.log.occupancy_trace;
    assert!(trace.windows(2).all(|w| w[0] <= w[1]));
    let cap = cfg.queue_size * set.num_classes;
    assert!(trace.iter().all(|&n| n <= cap));
    assert!(out.dictionary.occupancy().iter().all(|&n| n <= cfg.queue_size));
    for class in 0..set.num_classes {
        assert!(out.dictionary.store(class).all(|e| e.bg_label == class && e.fg_label != class));
    }
}

#[test]
fn training_is_deterministic() {
    let (cfg, set) = tiny();
    let a = train::<f32>(&cfg, &set).unwrap();
    let b = train::<f32>(&cfg, &set).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(
        checkpoint::encode(&a.model, Some("x")).unwrap(),
        checkpoint::encode(&b.model, Some("x")).unwrap()
    );
    let mut other = cfg.clone();
    other.seeds = cfg.seeds.offset(1);
    assert_ne!(train::<f32>(&other, &set).unwrap().model, a.model);
}

#[test]
fn in_batch_donors_and_texture_positives_train() {
    let (mut cfg, set) = tiny();
    cfg.donor_mode = DonorMode::InBatch;
    train::<f32>(&cfg, &set).unwrap();
    cfg.positive_kind = PositiveKind::Texture;
    let out = train::<f32>(&cfg, &set).unwrap();
    assert!(out.log.counters.dictionary_enqueues > 0);
}

#[test]
fn double_precision_training_runs() {
    let (mut cfg, set) = tiny();
    cfg.epochs = 1;
    cfg.optimizer.decay_epoch = 1;
    let out = train::<f64>(&cfg, &set).unwrap();
    assert!(out.log.epochs[0].mean_class_loss.is_finite());
}

#[test]
fn divergence_reports_where_it_happened() {
    let (mut cfg, set) = tiny();
    cfg.optimizer.lr = 1e30;
    cfg.optimizer.lr_decayed = 1e30;
    match train::<f32>(&cfg, &set) {
        Err(CladError::Numeric { location, .. }) => assert!(location.starts_with("epoch "), "{location}"),
        other => panic!("expected a numeric fault, got {:?}", other.map(|o| o.log)),
    }
}

#[test]
fn csv_log_carries_fingerprint_and_seeds() {
    let (cfg, set) = tiny();
    let csv = train::<f32>(&cfg, &set).unwrap().log.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), format!("# fingerprint: {}", cfg.fingerprint()));
    assert_eq!(lines.next().unwrap(), "# seeds: init=1 data=2 augment=3");
    assert_eq!(lines.next().unwrap(), "epoch,mean_class_loss,mean_con_loss,lr,dict_occupancy");
    assert_eq!(lines.count(), cfg.epochs);
}
