use std::time::Instant;

use dualcon_core::augment::AugmentPolicy;
use dualcon_core::data::{split_semi, synth_blobs, BlobSpec, Dataset, SemiSplit};
use dualcon_core::diffcore::{grad_check, Tape};
use dualcon_core::losses::{cross_entropy_logits_node, feature_contrast_loss};
use dualcon_core::model::{encode, init_params, ModelDims, ModelParams};
use dualcon_core::trainer::{evaluate, fit, sgd_step, train_step, Batch, SgdState, TrainConfig};
use dualcon_core::{Error, Rng, Tensor};

fn blob_data(seed: u64, per_class: usize) -> Dataset {
    synth_blobs(&mut Rng::new(seed), &BlobSpec::new(3, per_class, 8, 1.0)).unwrap()
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 6,
        milestones: vec![3, 5],
        batch: 32,
        hidden: vec![16],
        feature_dim: 8,
        seed: 11,
        ..TrainConfig::default()
    }
}

/// 16 samples, the first `labeled` of which carry labels.
fn batch16(labeled: usize) -> (Dataset, Batch) {
    let ds = blob_data(2, 6);
    let ids: Vec<usize> = (0..16).collect();
    let batch = Batch {
        x: ds.x.select_rows(&ids).unwrap(),
        labels: ds.y[..labeled].to_vec(),
        ids,
    };
    (ds, batch)
}

fn params_for(cfg: &TrainConfig, ds: &Dataset, seed: u64) -> ModelParams {
    let dims = cfg.model_dims(ds.sample_width(), ds.classes).unwrap();
    init_params(&mut Rng::new(seed), &dims).unwrap()
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let (ds, batch) = batch16(6);
    let aug = Rng::new(9);
    for (i, cfg) in [
        small_cfg(),
        TrainConfig {
            normalize: false,
            ..small_cfg()
        },
        small_cfg().supervised_only(),
    ]
    .into_iter()
    .enumerate()
    {
        let params = params_for(&cfg, &ds, 40 + i as u64);
        let dims = params.dims.clone();
        let f = |flat: &Tensor| {
            let p = ModelParams::from_flat(&dims, flat.data()).unwrap();
            let (g, loss) = train_step(&p, &batch, &cfg, &aug).unwrap();
            (loss.total, Tensor::new(flat.shape(), g.to_flat()).unwrap())
        };
        let x = Tensor::new(&[params.num_values()], params.to_flat()).unwrap();
        let report = grad_check(f, &x, 1e-5, 1e-4);
        assert!(report.pass, "config {i}: {report:?}");
        assert!(report.compared > report.excluded, "config {i}: {report:?}");
    }
}

#[test]
fn ce_only_step_is_the_supervised_gradient() {
    let (ds, batch) = batch16(5);
    let cfg = small_cfg().supervised_only();
    let params = params_for(&cfg, &ds, 3);
    let (grads, loss) = train_step(&params, &batch, &cfg, &Rng::new(0)).unwrap();
    assert_eq!((loss.feature_contrast, loss.semantic_contrast), (0.0, 0.0));

    let labeled = batch.x.select_rows(&[0, 1, 2, 3, 4]).unwrap();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape).unwrap();
    let x = tape.leaf(labeled).unwrap();
    let z = bound.encode(&mut tape, x).unwrap();
    let logits = bound.logits(&mut tape, z).unwrap();
    let ce = cross_entropy_logits_node(&mut tape, logits, &batch.labels).unwrap();
    tape.finalize();
    let reference = bound.gradients(&tape.backward(ce).unwrap(), &params);
    assert!((tape.scalar(ce) - loss.ce).abs() < 1e-12);
    assert!((loss.total - loss.ce).abs() < 1e-15);
    for (a, b) in grads.tensors().iter().zip(reference.tensors()) {
        assert!(a.max_abs_diff(b) < 1e-12);
    }
}

#[test]
fn identity_views_give_self_alignment_feature_loss() {
    let (ds, batch) = batch16(4);
    let cfg = TrainConfig {
        augment: AugmentPolicy::identity(),
        tau_f: 1.0,
        ..small_cfg()
    };
    let params = params_for(&cfg, &ds, 8);
    let (_, loss) = train_step(&params, &batch, &cfg, &Rng::new(1)).unwrap();
    let z = encode(&params, &batch.x).unwrap();
    let direct = feature_contrast_loss(&z, &z, 1.0, true).unwrap();
    assert!((loss.feature_contrast - direct).abs() < 1e-12);
    let w = loss.weights;
    let sum =
        w.ce * loss.ce + w.feature * loss.feature_contrast + w.semantic * loss.semantic_contrast;
    assert!((loss.total - sum).abs() < 1e-12);
}

#[test]
fn ablation_flags_zero_their_terms() {
    let (ds, batch) = batch16(4);
    let params = params_for(&small_cfg(), &ds, 8);
    let mut cfg = small_cfg();
    cfg.use_feature_contrast = false;
    let (_, l) = train_step(&params, &batch, &cfg, &Rng::new(1)).unwrap();
    assert!(l.feature_contrast == 0.0 && l.semantic_contrast > 0.0);
    let mut cfg = small_cfg();
    cfg.use_semantic_contrast = false;
    let (_, l) = train_step(&params, &batch, &cfg, &Rng::new(1)).unwrap();
    assert!(l.semantic_contrast == 0.0 && l.feature_contrast > 0.0);
}

#[test]
fn unlabeled_batch_with_ce_is_a_contract_error() {
    let (ds, batch) = batch16(0);
    let cfg = small_cfg();
    let params = params_for(&cfg, &ds, 1);
    assert!(matches!(
        train_step(&params, &batch, &cfg, &Rng::new(0)),
        Err(Error::Contract(_))
    ));
}

fn scalar_params(values: [f64; 4]) -> ModelParams {
    let dims = ModelDims::new(1, vec![], 1, 1).unwrap();
    ModelParams::from_flat(&dims, &values).unwrap()
}

#[test]
fn sgd_matches_scalar_momentum_recursion() {
    // f(w) = w^2 / 2 per coordinate, so the gradient is w itself
    let start = [1.0, -0.5, 2.0, 0.25];
    let mut params = scalar_params(start);
    let mut state = SgdState::new(&params);
    let (lr, mu) = (0.1, 0.9);
    let mut w = start;
    let mut v = [0.0; 4];
    for _ in 0..200 {
        let grads = params.clone();
        sgd_step(&mut params, &grads, &mut state, lr, mu, 0.0).unwrap();
        for k in 0..4 {
            v[k] = mu * v[k] + w[k];
            w[k] -= lr * v[k];
        }
        for (a, b) in params.to_flat().iter().zip(&w) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
    assert_eq!(state.step_count, 200);
}

#[test]
fn sgd_trivial_cases() {
    let mut params = scalar_params([1.0, 2.0, 3.0, 4.0]);
    let mut state = SgdState::new(&params);
    let zero = params.zeros_like();
    sgd_step(&mut params, &zero, &mut state, 0.5, 0.9, 0.0).unwrap();
    assert_eq!(params.to_flat(), vec![1.0, 2.0, 3.0, 4.0]);

    let grads = scalar_params([1.0, 1.0, -2.0, 0.0]);
    let mut fresh = SgdState::new(&params);
    sgd_step(&mut params, &grads, &mut fresh, 0.5, 0.0, 0.0).unwrap();
    assert_eq!(params.to_flat(), vec![0.5, 1.5, 4.0, 4.0]);

    let mut bad = params.zeros_like();
    bad.head.bias.data_mut()[0] = f64::NAN;
    let err = sgd_step(&mut params, &bad, &mut state, 0.1, 0.9, 0.0).unwrap_err();
    assert!(err.to_string().contains("head.bias"), "{err}");
}

#[test]
fn zero_epochs_returns_initial_params() {
    let ds = blob_data(1, 20);
    let split = split_semi(&ds, 5, &mut Rng::new(1)).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..small_cfg()
    };
    let out = fit(&cfg, &ds, &split, None).unwrap();
    assert!(out.metrics.is_empty());
    let dims = cfg.model_dims(ds.sample_width(), ds.classes).unwrap();
    let initial = init_params(&mut Rng::new(cfg.seed).derive(1), &dims).unwrap();
    assert_eq!(out.params, initial);
}

#[test]
fn fit_is_deterministic_and_reduces_loss() {
    let ds = blob_data(5, 60);
    let test = blob_data(6, 20);
    let split = split_semi(&ds, 5, &mut Rng::new(2)).unwrap();
    let cfg = small_cfg();
    let a = fit(&cfg, &ds, &split, Some(&test)).unwrap();
    let b = fit(&cfg, &ds, &split, Some(&test)).unwrap();
    assert_eq!(format!("{:?}", a.metrics), format!("{:?}", b.metrics));
    assert_eq!(a.params, b.params);
    assert_eq!(a.metrics.len(), 6);
    let first = a.metrics.first().unwrap();
    let last = a.metrics.last().unwrap();
    assert!(last.loss_total < first.loss_total, "{first:?} -> {last:?}");
    for row in &a.metrics {
        let w = cfg.effective_weights();
        let sum = w.ce * row.loss_ce + w.feature * row.loss_z + w.semantic * row.loss_q;
        assert!((row.loss_total - sum).abs() < 1e-12);
        assert!(row.loss_ce >= 0.0 && row.loss_z >= 0.0 && row.loss_q >= 0.0);
    }
    assert_eq!(a.metrics[2].lr, 0.1 * 0.1);
    let other = fit(&TrainConfig { seed: 12, ..cfg }, &ds, &split, Some(&test)).unwrap();
    assert_ne!(other.params, a.params);
}

#[test]
fn eval_every_thins_rows_but_keeps_the_last() {
    let ds = blob_data(5, 30);
    let split = split_semi(&ds, 5, &mut Rng::new(2)).unwrap();
    let cfg = TrainConfig {
        eval_every: 4,
        ..small_cfg()
    };
    let out = fit(&cfg, &ds, &split, None).unwrap();
    let epochs: Vec<usize> = out.metrics.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, vec![4, 6]);
    assert_eq!(out.running_losses.len(), 6);
    assert!(out.metrics[0].test_acc.is_nan());
}

#[test]
fn supervised_only_ignores_unlabeled_samples() {
    let ds = blob_data(7, 40);
    let split = split_semi(&ds, 6, &mut Rng::new(3)).unwrap();
    let cfg = TrainConfig {
        batch: 8,
        ..small_cfg().supervised_only()
    };
    let full = fit(&cfg, &ds, &split, None).unwrap();
    let only = SemiSplit {
        labeled: split.labeled.clone(),
        unlabeled: vec![],
    };
    let trimmed = fit(&cfg, &ds, &only, None).unwrap();
    assert_eq!(
        format!("{:?}", full.metrics),
        format!("{:?}", trimmed.metrics)
    );
    assert_eq!(full.params, trimmed.params);
}

#[test]
fn divergence_is_reported() {
    let ds = blob_data(7, 40);
    let split = split_semi(&ds, 6, &mut Rng::new(3)).unwrap();
    let cfg = TrainConfig {
        lr0: 1e6,
        momentum: 0.0,
        normalize: false,
        ..small_cfg()
    };
    match fit(&cfg, &ds, &split, None) {
        Err(Error::Diverged { .. }) => {}
        other => panic!(
            "expected divergence, got {:?}",
            other.map(|r| r.running_losses)
        ),
    }
}

#[test]
fn perfect_predictions_score_one() {
    // head copies the first feature with a large margin toward class 0 vs 1
    let dims = ModelDims::new(2, vec![], 2, 2).unwrap();
    let mut p = ModelParams::zeros(&dims).unwrap();
    p.encoder[0].weight = Tensor::eye(2);
    p.head.weight = Tensor::from_rows(&[[10.0, -10.0], [-10.0, 10.0]]).unwrap();
    let x = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [2.0, 0.5]]).unwrap();
    let ds = Dataset::new(x, vec![0, 1, 0], 2).unwrap();
    assert_eq!(evaluate(&p, &ds).unwrap(), 1.0);
}

#[test]
fn untrained_ten_class_model_is_at_chance() {
    let mut total = 0.0;
    let seeds = 20;
    for seed in 0..seeds {
        let mut rng = Rng::new(1000 + seed);
        let n = 1000;
        let x = Tensor::new(&[n, 20], (0..n * 20).map(|_| rng.normal()).collect()).unwrap();
        let y = (0..n).map(|i| i % 10).collect();
        let ds = Dataset::new(x, y, 10).unwrap();
        let dims = ModelDims::new(20, vec![32], 16, 10).unwrap();
        let params = init_params(&mut rng, &dims).unwrap();
        total += evaluate(&params, &ds).unwrap();
    }
    let mean = total / seeds as f64;
    assert!((mean - 0.1).abs() <= 0.03, "{mean}");
}

#[test]
fn cifar_sized_forward_pass_is_fast() {
    let mut rng = Rng::new(3);
    let x = Tensor::new(
        &[512, 3072],
        (0..512 * 3072).map(|_| rng.uniform()).collect(),
    )
    .unwrap();
    let dims = ModelDims::new(3072, vec![], 64, 10).unwrap();
    let params = init_params(&mut rng, &dims).unwrap();
    let start = Instant::now();
    let z = encode(&params, &x).unwrap();
    let q = dualcon_core::model::classify(&params, &z, 1.0).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(q.shape(), &[512, 10]);
    assert!(elapsed.as_secs_f64() < 1.0, "{elapsed:?}");
}
