use dualcon_core::diffcore::{grad_check, NodeId, Tape};
use dualcon_core::{Result, Rng, Tensor};

fn random(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_in(lo, hi)).collect()).unwrap()
}

/// Scalarizes a primitive as `sum(w * op(x))` with a fixed random weighting.
fn check_unary(name: &str, build: impl Fn(&mut Tape, NodeId) -> Result<NodeId>, lo: f64, hi: f64) {
    let mut rng = Rng::new(0xD1FF);
    for trial in 0..10 {
        let x = random(&mut rng, &[3, 4], lo, hi);
        let probe = {
            let mut t = Tape::new();
            let xi = t.leaf(x.clone()).unwrap();
            let out = build(&mut t, xi).unwrap();
            t.value(out).shape().to_vec()
        };
        let w = random(&mut rng, &probe, -1.0, 1.0);
        let f = |v: &Tensor| {
            let mut t = Tape::new();
            let xi = t.leaf(v.clone()).unwrap();
            let wi = t.leaf(w.clone()).unwrap();
            let y = build(&mut t, xi).unwrap();
            let p = t.mul(y, wi).unwrap();
            let out = t.sum_all(p).unwrap();
            t.finalize();
            let g = t.backward(out).unwrap();
            (t.scalar(out), g.get_or_zeros(xi, v))
        };
        let r = grad_check(f, &x, 1e-5, 1e-6);
        assert!(r.pass, "{name} trial {trial}: {r:?}");
    }
}

/// Same for a binary primitive; checks the gradient for both operands.
fn check_binary(
    name: &str,
    shapes: ([usize; 2], [usize; 2]),
    build: impl Fn(&mut Tape, NodeId, NodeId) -> Result<NodeId> + Copy,
) {
    let mut rng = Rng::new(0xB1);
    for trial in 0..10 {
        let a = random(&mut rng, &shapes.0, -2.0, 2.0);
        let b = random(&mut rng, &shapes.1, -2.0, 2.0);
        let out_shape = {
            let mut t = Tape::new();
            let (ai, bi) = (t.leaf(a.clone()).unwrap(), t.leaf(b.clone()).unwrap());
            let o = build(&mut t, ai, bi).unwrap();
            t.value(o).shape().to_vec()
        };
        let w = random(&mut rng, &out_shape, -1.0, 1.0);
        let eval = |av: &Tensor, bv: &Tensor, wrt_a: bool| {
            let mut t = Tape::new();
            let ai = t.leaf(av.clone()).unwrap();
            let bi = t.leaf(bv.clone()).unwrap();
            let wi = t.leaf(w.clone()).unwrap();
            let y = build(&mut t, ai, bi).unwrap();
            let p = t.mul(y, wi).unwrap();
            let out = t.sum_all(p).unwrap();
            t.finalize();
            let g = t.backward(out).unwrap();
            let grad = if wrt_a {
                g.get_or_zeros(ai, av)
            } else {
                g.get_or_zeros(bi, bv)
            };
            (t.scalar(out), grad)
        };
        let ra = grad_check(|v| eval(v, &b, true), &a, 1e-5, 1e-6);
        let rb = grad_check(|v| eval(&a, v, false), &b, 1e-5, 1e-6);
        assert!(ra.pass, "{name} lhs trial {trial}: {ra:?}");
        assert!(rb.pass, "{name} rhs trial {trial}: {rb:?}");
    }
}

#[test]
fn unary_primitives_match_finite_differences() {
    check_unary("exp", |t, x| t.exp(x), -2.0, 2.0);
    check_unary("log", |t, x| t.log(x, 1e-12), 0.2, 3.0);
    check_unary("relu", |t, x| t.relu(x), -2.0, 2.0);
    check_unary("row_sum", |t, x| t.row_sum(x), -2.0, 2.0);
    check_unary("sum_all", |t, x| t.sum_all(x), -2.0, 2.0);
    check_unary("scale", |t, x| t.scale(x, -0.37), -2.0, 2.0);
    check_unary("transpose", |t, x| t.transpose(x), -2.0, 2.0);
    check_unary("row_softmax", |t, x| t.row_softmax(x, 0.6), -3.0, 3.0);
    check_unary(
        "log_softmax_rows",
        |t, x| t.log_softmax_rows(x, 0.9),
        -3.0,
        3.0,
    );
    check_unary(
        "l2_normalize_rows",
        |t, x| t.l2_normalize_rows(x, 1e-12),
        -2.0,
        2.0,
    );
}

#[test]
fn binary_primitives_match_finite_differences() {
    check_binary("add", ([3, 4], [3, 4]), |t, a, b| t.add(a, b));
    check_binary("sub", ([3, 4], [3, 4]), |t, a, b| t.sub(a, b));
    check_binary("mul", ([3, 4], [3, 4]), |t, a, b| t.mul(a, b));
    check_binary("matmul", ([3, 4], [4, 2]), |t, a, b| t.matmul(a, b));
    check_binary("add_row", ([3, 4], [1, 4]), |t, a, b| t.add_row(a, b));
}

fn two_layer(x: &Tensor, w1: &Tensor, w2: &Tensor) -> (f64, Tensor) {
    let mut t = Tape::new();
    let xi = t.leaf(x.clone()).unwrap();
    let a = t.leaf(w1.clone()).unwrap();
    let b = t.leaf(w2.clone()).unwrap();
    let h = t.matmul(xi, a).unwrap();
    let h = t.relu(h).unwrap();
    let o = t.matmul(h, b).unwrap();
    let p = t.row_softmax(o, 1.0).unwrap();
    let l = t.log(p, 1e-12).unwrap();
    let s = t.sum_all(l).unwrap();
    let out = t.scale(s, -0.25).unwrap();
    t.finalize();
    let g = t.backward(out).unwrap();
    (t.scalar(out), g.get(a).unwrap().clone())
}

#[test]
fn two_layer_network_matches_finite_differences() {
    let mut rng = Rng::new(77);
    let x = random(&mut rng, &[4, 5], -1.0, 1.0);
    let w1 = random(&mut rng, &[5, 6], -1.0, 1.0);
    let w2 = random(&mut rng, &[6, 3], -1.0, 1.0);
    let r = grad_check(|w| two_layer(&x, w, &w2), &w1, 1e-5, 1e-5);
    assert!(r.pass, "{r:?}");
}

#[test]
fn gradient_of_sum_is_sum_of_gradients() {
    let mut rng = Rng::new(8);
    let x = random(&mut rng, &[3, 3], -1.0, 1.0);
    let grad = |which: u8| {
        let mut t = Tape::new();
        let xi = t.leaf(x.clone()).unwrap();
        let f = t.exp(xi).unwrap();
        let f = t.sum_all(f).unwrap();
        let g = t.row_softmax(xi, 1.0).unwrap();
        let g = t.log(g, 1e-12).unwrap();
        let g = t.sum_all(g).unwrap();
        let out = match which {
            0 => f,
            1 => g,
            _ => t.add(f, g).unwrap(),
        };
        t.finalize();
        t.backward(out).unwrap().get(xi).unwrap().clone()
    };
    let (gf, gg, gs) = (grad(0), grad(1), grad(2));
    for i in 0..gs.numel() {
        assert!((gs.data()[i] - gf.data()[i] - gg.data()[i]).abs() < 1e-12);
    }
}

#[test]
fn backward_is_repeatable_bit_for_bit() {
    let mut rng = Rng::new(21);
    let x = random(&mut rng, &[4, 5], -1.0, 1.0);
    let w = random(&mut rng, &[5, 3], -1.0, 1.0);
    let mut t = Tape::new();
    let xi = t.leaf(x).unwrap();
    let wi = t.leaf(w).unwrap();
    let h = t.matmul(xi, wi).unwrap();
    let n = t.l2_normalize_rows(h, 1e-12).unwrap();
    let s = t.log_softmax_rows(n, 0.5).unwrap();
    let out = t.sum_all(s).unwrap();
    t.finalize();
    assert_eq!(t.backward(out).unwrap(), t.backward(out).unwrap());
}
