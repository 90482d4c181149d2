use dualcon_core::diffcore::{grad_check, NodeId, Tape};
use dualcon_core::losses::{
    cross_entropy_logits_node, feature_contrast_node, semantic_contrast_node,
};
use dualcon_core::{Result, Rng, Tensor};

fn gaussian(rng: &mut Rng, n: usize, m: usize) -> Tensor {
    Tensor::new(&[n, m], (0..n * m).map(|_| rng.normal()).collect()).unwrap()
}

/// Grad-checks `loss(x, other)` with respect to `x`.
fn check(
    name: &str,
    x: &Tensor,
    other: &Tensor,
    build: impl Fn(&mut Tape, NodeId, NodeId) -> Result<NodeId>,
) {
    let f = |v: &Tensor| {
        let mut t = Tape::new();
        let a = t.leaf(v.clone()).unwrap();
        let b = t.leaf(other.clone()).unwrap();
        let out = build(&mut t, a, b).unwrap();
        t.finalize();
        let g = t.backward(out).unwrap();
        (t.scalar(out), g.get_or_zeros(a, v))
    };
    let r = grad_check(f, x, 1e-5, 1e-4);
    assert!(r.pass, "{name}: {r:?}");
}

#[test]
fn contrast_and_cross_entropy_gradients() {
    let mut rng = Rng::new(404);
    for _ in 0..5 {
        let z = gaussian(&mut rng, 6, 4);
        let za = gaussian(&mut rng, 6, 4);
        for normalize in [true, false] {
            check("feature", &z, &za, |t, a, b| {
                feature_contrast_node(t, a, b, 0.5, normalize)
            });
            check("feature (aug side)", &za, &z, |t, a, b| {
                feature_contrast_node(t, b, a, 0.5, normalize)
            });
            // semantic contrast is differentiated through the softmax that produces q
            check("semantic", &z, &za, |t, a, b| {
                let q = t.row_softmax(a, 1.0)?;
                let qa = t.row_softmax(b, 1.0)?;
                semantic_contrast_node(t, q, qa, 0.9, normalize)
            });
        }
        check("cross entropy", &z, &za, |t, a, _| {
            cross_entropy_logits_node(t, a, &[0, 3, 1])
        });
    }
}
