//! Finite-difference checks of the analytic gradients of the full training objective.

use clad::netcore::{info_nce, Architecture, Encoder, ImageBatch, LossConfig, LossVariant, Param};
use clad::trainer::batch_objective;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ARCH: Architecture = Architecture {
    in_channels: 3,
    widths: [2, 3, 4],
    num_classes: 3,
};

struct Problem {
    anchors: ImageBatch<f64>,
    positives: ImageBatch<f64>,
    negatives: Vec<Vec<Vec<f64>>>,
    labels: Vec<usize>,
}

fn problem(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = |n: usize| {
        let mut b = ImageBatch::<f64>::zeros(n, 3, 8);
        b.data.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
        b
    };
    let anchors = batch(3);
    let positives = batch(3);
    let negatives = (0..3)
        .map(|_| (0..5).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
        .collect();
    Problem {
        anchors,
        positives,
        negatives,
        labels: vec![0, 2, 1],
    }
}

fn cfg(variant: LossVariant, lambda: f64) -> LossConfig {
    LossConfig {
        variant,
        lambda,
        tau: 0.2,
    }
}

fn loss_f64(model: &Encoder<f64>, p: &Problem, cfg: &LossConfig) -> f64 {
    batch_objective(model, cfg, &p.anchors, Some(&p.positives), &p.negatives, &p.labels)
        .unwrap()
        .loss
        .value
}

/// Central differences of every parameter, evaluated in f64.
fn numeric_grads(model: &Encoder<f64>, p: &Problem, cfg: &LossConfig, h: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for t in 0..model.params().len() {
        let mut g = Vec::new();
        for i in 0..model.params()[t].data.len() {
            let mut plus = model.clone();
            plus.params_mut()[t].data[i] += h;
            let mut minus = model.clone();
            minus.params_mut()[t].data[i] -= h;
            g.push((loss_f64(&plus, p, cfg) - loss_f64(&minus, p, cfg)) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn check(variant: LossVariant, lambda: f64, seed: u64) {
    let p = problem(seed);
    let cfg = cfg(variant, lambda);
    let model = Encoder::<f64>::new(ARCH, seed).unwrap();
    let numeric = numeric_grads(&model, &p, &cfg, 1e-6);

    let analytic = batch_objective(&model, &cfg, &p.anchors, Some(&p.positives), &p.negatives, &p.labels)
        .unwrap()
        .grads;
    for ((a, n), param) in analytic.iter().zip(&numeric).zip(model.params()) {
        let e = rel_err(a, n);
        assert!(e < 1e-6, "f64 {variant:?} {}: relative error {e:e}", param.name);
    }

    // f32 analytic gradients of the same weights against the f64 reference
    let m32: Encoder<f32> = model.cast();
    let cast = |b: &ImageBatch<f64>| ImageBatch::<f32> {
        n: b.n,
        channels: b.channels,
        size: b.size,
        data: b.data.iter().map(|&v| v as f32).collect(),
    };
    let analytic32 = batch_objective(&m32, &cfg, &cast(&p.anchors), Some(&cast(&p.positives)), &p.negatives, &p.labels)
        .unwrap()
        .grads;
    for ((a, n), param) in analytic32.iter().zip(&numeric).zip(model.params()) {
        let a: Vec<f64> = a.iter().map(|&v| v as f64).collect();
        let e = rel_err(&a, n);
        assert!(e < 1e-3, "f32 {variant:?} {}: relative error {e:e}", param.name);
    }
}

#[test]
fn full_objective_gradients_match_central_differences() {
    for seed in [11, 12] {
        check(LossVariant::CladPlus, 1.0, seed);
        check(LossVariant::Clad, 0.5, seed);
        check(LossVariant::Baseline, 0.0, seed);
    }
}

#[test]
fn positive_branch_receives_only_contrastive_gradient_in_clad() {
    // With lambda = 0 the positive branch is unused: gradients equal baseline bitwise.
    let p = problem(5);
    let model = Encoder::<f64>::new(ARCH, 5).unwrap();
    let run = |c: LossConfig| {
        batch_objective(&model, &c, &p.anchors, Some(&p.positives), &p.negatives, &p.labels).unwrap()
    };
    let base = run(cfg(LossVariant::Baseline, 1.0));
    let zero = run(cfg(LossVariant::Clad, 0.0));
    assert_eq!(base.grads, zero.grads);
    assert_eq!(base.loss.value.to_bits(), zero.loss.value.to_bits());
}

#[test]
fn stored_features_are_detached_from_later_updates() {
    let p = problem(8);
    let model = Encoder::<f64>::new(ARCH, 8).unwrap();
    let obj = batch_objective(&model, &cfg(LossVariant::Clad, 1.0), &p.anchors, Some(&p.positives), &p.negatives, &p.labels)
        .unwrap();
    let snapshot = obj.positive_features.clone();
    let mut moved = model.clone();
    for Param { data, .. } in moved.params_mut() {
        data.iter_mut().for_each(|v| *v += 0.1);
    }
    let _ = batch_objective(&moved, &cfg(LossVariant::Clad, 1.0), &p.anchors, Some(&p.positives), &p.negatives, &p.labels)
        .unwrap();
    assert_eq!(obj.positive_features, snapshot);
}

fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, d).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 0.05))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn info_nce_gradients_match_central_differences(
        a in vec_strategy(6),
        p in vec_strategy(6),
        negs in prop::collection::vec(vec_strategy(6), 1..8),
        tau in 0.05..1.0f64,
    ) {
        let r = info_nce(&a, &p, &negs, tau).unwrap();
        let h = 1e-6;
        let mut num_a = Vec::new();
        let mut num_p = Vec::new();
        for i in 0..6 {
            let bump = |v: &[f64], s: f64| { let mut w = v.to_vec(); w[i] += s; w };
            num_a.push((info_nce(&bump(&a, h), &p, &negs, tau).unwrap().loss
                - info_nce(&bump(&a, -h), &p, &negs, tau).unwrap().loss) / (2.0 * h));
            num_p.push((info_nce(&a, &bump(&p, h), &negs, tau).unwrap().loss
                - info_nce(&a, &bump(&p, -h), &negs, tau).unwrap().loss) / (2.0 * h));
        }
        prop_assert!(rel_err(&r.grad_anchor, &num_a) < 1e-4);
        prop_assert!(rel_err(&r.grad_positive, &num_p) < 1e-4);
    }

    #[test]
    fn info_nce_is_scale_invariant(
        a in vec_strategy(5),
        p in vec_strategy(5),
        negs in prop::collection::vec(vec_strategy(5), 1..6),
        s in 0.1..10.0f64,
    ) {
        let base = info_nce(&a, &p, &negs, 0.2).unwrap().loss;
        let sa: Vec<f64> = a.iter().map(|x| x * s).collect();
        let sp: Vec<f64> = p.iter().map(|x| x * s).collect();
        let scaled = info_nce(&sa, &sp, &negs, 0.2).unwrap().loss;
        prop_assert!((base - scaled).abs() <= 1e-9 * base.abs().max(1.0));
    }

    #[test]
    fn info_nce_grows_as_a_negative_approaches_the_anchor(
        a in vec_strategy(4),
        p in vec_strategy(4),
        n in vec_strategy(4),
    ) {
        // moving a negative toward the anchor cannot lower the loss
        let toward: Vec<f64> = n.iter().zip(&a).map(|(x, y)| 0.5 * x + 0.5 * y).collect();
        let far = info_nce(&a, &p, std::slice::from_ref(&n), 0.2).unwrap().loss;
        let near_cos = clad::netcore::cosine_sim(&a, &toward);
        let far_cos = clad::netcore::cosine_sim(&a, &n).unwrap();
        if let Ok(c) = near_cos {
            let near = info_nce(&a, &p, &[toward], 0.2).unwrap().loss;
            if c >= far_cos {
                prop_assert!(near >= far - 1e-12);
            }
        }
    }
}
