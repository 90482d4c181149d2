//! Finite-difference checks of the loss and model gradients.

use dualcon_core::augment::{AugmentKind, AugmentPolicy};
use dualcon_core::diffcore::{grad_check, GradCheckReport, NodeId, Tape};
use dualcon_core::losses::{
    cross_entropy_logits_node, cross_entropy_node, feature_contrast_node, semantic_contrast_node,
    LossWeights,
};
use dualcon_core::model::{init_params, ModelDims, ModelParams};
use dualcon_core::trainer::{train_step, Batch, TrainConfig};
use dualcon_core::{Rng, Tensor};

use crate::error::Result;

pub struct GradCase {
    pub name: String,
    pub report: GradCheckReport,
}

fn gaussian(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).expect("positive shape")
}

fn labels(rng: &mut Rng, n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|_| rng.below(c)).collect()
}

type Build<'a> = dyn Fn(&mut Tape, NodeId, NodeId) -> dualcon_core::Result<NodeId> + 'a;

/// Gradient of `build(x, other)` with respect to `x`.
fn check_input(x: &Tensor, other: &Tensor, build: &Build<'_>, h: f64, tol: f64) -> GradCheckReport {
    let f = |v: &Tensor| {
        let mut t = Tape::new();
        let a = t.leaf(v.clone()).expect("leaf");
        let b = t.leaf(other.clone()).expect("leaf");
        let out = build(&mut t, a, b).expect("loss graph");
        t.finalize();
        let g = t.backward(out).expect("scalar output");
        (t.scalar(out), g.get_or_zeros(a, v))
    };
    grad_check(f, x, h, tol)
}

/// Gradient of the training objective with respect to every parameter.
fn check_objective(
    params: &ModelParams,
    batch: &Batch,
    cfg: &TrainConfig,
    aug: &Rng,
    h: f64,
    tol: f64,
) -> GradCheckReport {
    let dims = params.dims.clone();
    let f = |flat: &Tensor| {
        let p = ModelParams::from_flat(&dims, flat.data()).expect("flat layout");
        let (g, loss) = train_step(&p, batch, cfg, aug).expect("train step");
        (
            loss.total,
            Tensor::new(flat.shape(), g.to_flat()).expect("same length"),
        )
    };
    let x = Tensor::new(&[params.num_values()], params.to_flat()).expect("non-empty model");
    grad_check(f, &x, h, tol)
}

/// `sum(R * net(params, x))` with respect to the parameters, where `net` is
/// the encoder, or the classifier applied to `x` as features.
fn check_network(
    params: &ModelParams,
    x: &Tensor,
    r: &Tensor,
    classify: bool,
    h: f64,
    tol: f64,
) -> GradCheckReport {
    let dims = params.dims.clone();
    let f = |flat: &Tensor| {
        let p = ModelParams::from_flat(&dims, flat.data()).expect("flat layout");
        let mut t = Tape::new();
        let bound = p.bind(&mut t).expect("bind");
        let xi = t.leaf(x.clone()).expect("leaf");
        let y = if classify {
            bound.classify(&mut t, xi, 1.0)
        } else {
            bound.encode(&mut t, xi)
        }
        .expect("forward");
        let ri = t.leaf(r.clone()).expect("leaf");
        let prod = t.mul(y, ri).expect("same shape");
        let out = t.sum_all(prod).expect("sum");
        t.finalize();
        let g = t.backward(out).expect("scalar");
        (
            t.scalar(out),
            Tensor::new(flat.shape(), bound.gradients(&g, &p).to_flat()).expect("length"),
        )
    };
    let flat = Tensor::new(&[params.num_values()], params.to_flat()).expect("non-empty model");
    grad_check(f, &flat, h, tol)
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        hidden: vec![6],
        feature_dim: 4,
        augment: AugmentPolicy::noise(0.3),
        ..TrainConfig::default()
    }
}

/// Number of cases in [`gradient_suite`].
pub const SUITE_SIZE: usize = 20;

/// Seeded random configurations covering each loss term on its own, the model
/// and the full weighted objective under every ablation switch.
pub fn gradient_suite(seed: u64, h: f64, tol: f64) -> Result<Vec<GradCase>> {
    let root = Rng::new(seed);
    let mut cases = Vec::with_capacity(SUITE_SIZE);
    let mut push = |name: &str, report: GradCheckReport| {
        cases.push(GradCase {
            name: name.to_string(),
            report,
        })
    };

    let mut rng = root.derive(1);
    let (z, za) = (gaussian(&mut rng, &[6, 4]), gaussian(&mut rng, &[6, 4]));
    for normalize in [true, false] {
        let build = move |t: &mut Tape, a: NodeId, b: NodeId| {
            feature_contrast_node(t, a, b, 0.5, normalize)
        };
        let name = if normalize {
            "feature contrast"
        } else {
            "feature contrast, raw"
        };
        push(name, check_input(&z, &za, &build, h, tol));
    }
    let build = |t: &mut Tape, a: NodeId, b: NodeId| feature_contrast_node(t, b, a, 0.5, true);
    push(
        "feature contrast, augmented side",
        check_input(&za, &z, &build, h, tol),
    );
    for normalize in [true, false] {
        let build = move |t: &mut Tape, a: NodeId, b: NodeId| {
            let q = t.row_softmax(a, 1.0)?;
            let qa = t.row_softmax(b, 1.0)?;
            semantic_contrast_node(t, q, qa, 0.9, normalize)
        };
        let name = if normalize {
            "semantic contrast"
        } else {
            "semantic contrast, raw"
        };
        push(name, check_input(&z, &za, &build, h, tol));
    }
    let y = labels(&mut rng, 4, 4);
    let y2 = y.clone();
    let build = move |t: &mut Tape, a: NodeId, _: NodeId| cross_entropy_logits_node(t, a, &y);
    push(
        "cross-entropy from logits",
        check_input(&z, &za, &build, h, tol),
    );
    let build = move |t: &mut Tape, a: NodeId, _: NodeId| {
        let q = t.row_softmax(a, 1.0)?;
        cross_entropy_node(t, q, &y2)
    };
    push(
        "cross-entropy from probabilities",
        check_input(&z, &za, &build, h, tol),
    );

    let mut rng = root.derive(2);
    let dims = ModelDims::new(5, vec![7, 6], 4, 3)?;
    let params = init_params(&mut rng, &dims)?;
    let x = gaussian(&mut rng, &[8, 5]);
    push(
        "encoder",
        check_network(&params, &x, &gaussian(&mut rng, &[8, 4]), false, h, tol),
    );
    let feats = gaussian(&mut rng, &[8, 4]);
    push(
        "classifier",
        check_network(&params, &feats, &gaussian(&mut rng, &[8, 3]), true, h, tol),
    );
    let build = |t: &mut Tape, a: NodeId, r: NodeId| {
        let bound = params.bind(t)?;
        let z = bound.encode(t, a)?;
        let prod = t.mul(z, r)?;
        t.sum_all(prod)
    };
    push(
        "encoder, input side",
        check_input(&x, &gaussian(&mut rng, &[8, 4]), &build, h, tol),
    );

    let mut rng = root.derive(3);
    let n = 16;
    let x = gaussian(&mut rng, &[n, 5]);
    let batch = Batch {
        x,
        labels: labels(&mut rng, 5, 3),
        ids: (0..n).collect(),
    };
    let aug = rng.derive(99);
    let base = small_cfg();
    let variants: Vec<(&str, TrainConfig)> = vec![
        ("objective, all terms", base.clone()),
        (
            "objective, raw similarities",
            TrainConfig {
                normalize: false,
                ..base.clone()
            },
        ),
        ("objective, supervised only", base.clone().supervised_only()),
        (
            "objective, without feature contrast",
            TrainConfig {
                use_feature_contrast: false,
                ..base.clone()
            },
        ),
        (
            "objective, without semantic contrast",
            TrainConfig {
                use_semantic_contrast: false,
                ..base.clone()
            },
        ),
        (
            "objective, sharp temperatures",
            TrainConfig {
                tau_f: 0.1,
                tau_s: 0.2,
                ..base.clone()
            },
        ),
        (
            "objective, identity views",
            TrainConfig {
                augment: AugmentPolicy::identity(),
                ..base.clone()
            },
        ),
        (
            "objective, unequal weights",
            TrainConfig {
                weights: LossWeights::new(0.5, 2.0, 0.3)?,
                ..base.clone()
            },
        ),
        (
            "objective, deeper encoder",
            TrainConfig {
                hidden: vec![6, 5],
                ..base.clone()
            },
        ),
    ];
    for (i, (name, cfg)) in variants.into_iter().enumerate() {
        let dims = cfg.model_dims(5, 3)?;
        let params = init_params(&mut root.derive(10 + i as u64), &dims)?;
        push(name, check_objective(&params, &batch, &cfg, &aug, h, tol));
    }

    let mut rng = root.derive(4);
    let images = gaussian(&mut rng, &[8, 4, 4, 2]);
    let batch = Batch {
        x: images,
        labels: labels(&mut rng, 3, 3),
        ids: (0..8).collect(),
    };
    let cfg = TrainConfig {
        augment: AugmentPolicy {
            kind: AugmentKind::Compose,
            ksize: 3,
            ..AugmentPolicy::default()
        },
        ..small_cfg()
    };
    let params = init_params(&mut rng, &cfg.model_dims(32, 3)?)?;
    push(
        "objective, rotated and blurred images",
        check_objective(&params, &batch, &cfg, &rng.derive(5), h, tol),
    );
    debug_assert_eq!(cases.len(), SUITE_SIZE);
    Ok(cases)
}
