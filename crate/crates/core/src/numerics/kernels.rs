use alloc::format;
use alloc::vec;

use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Matrix product of `n x k` and `k x m`.
///
/// Loop order is fixed (i, k, j), so the summation order per output entry is
/// always ascending in `k` and results are bit-reproducible.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = a.require_matrix("matmul")?;
    let (k2, m) = b.require_matrix("matmul")?;
    if k != k2 {
        return Err(shape_err("matmul", a.shape(), b.shape()));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &bd[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[n, m], out)
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "temperature must be positive and finite, got {temperature}"
        )))
    }
}

/// Softmax of `row / temperature` for every row, max-shifted.
pub fn row_softmax(m: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    let (n, c) = m.require_matrix("row_softmax")?;
    let mut out = m.clone();
    for i in 0..n {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp((*v - max) / temperature);
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    debug_assert_eq!(out.cols(), c);
    Ok(out)
}

/// `log(row_softmax(m, temperature))` evaluated as `x/T - logsumexp(x/T)`.
///
/// Every output entry is `<= 0` exactly, since the shifted maximum contributes
/// `exp(0) = 1` to the normalizer.
pub fn log_softmax_rows(m: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    let (n, _) = m.require_matrix("log_softmax_rows")?;
    let mut out = m.clone();
    for i in 0..n {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max) / temperature;
            total += libm::exp(*v);
        }
        let log_total = libm::log(total);
        for v in row.iter_mut() {
            *v -= log_total;
        }
    }
    Ok(out)
}

/// Divides each row by `max(||row||_2, eps)`.
pub fn l2_normalize_rows(m: &Tensor, eps: f64) -> Result<Tensor> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    let (n, _) = m.require_matrix("l2_normalize_rows")?;
    let mut out = m.clone();
    for i in 0..n {
        let row = out.row_mut(i);
        let norm = row_norm(row).max(eps);
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    Ok(out)
}

pub(crate) fn row_norm(row: &[f64]) -> f64 {
    libm::sqrt(row.iter().map(|v| v * v).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (n, k) = (a.shape()[0], a.shape()[1]);
        let m = b.shape()[1];
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                for p in 0..k {
                    out[i * m + j] += a.at(i, p) * b.at(p, j);
                }
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let i2 = Tensor::eye(2);
        assert_eq!(matmul(&i2, &i2).unwrap(), i2);
        let a = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[[1.0], [1.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = random(&mut rng, &[7, 5]);
        let b = random(&mut rng, &[5, 3]);
        let got = matmul(&a, &b).unwrap();
        for (g, w) in got.data().iter().zip(naive_matmul(&a, &b)) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        assert_eq!(
            err,
            Error::Shape {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            }
        );
    }

    #[test]
    fn softmax_examples() {
        let s = row_softmax(&Tensor::from_rows(&[[0.0, 0.0, 0.0]]).unwrap(), 1.0).unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = row_softmax(&Tensor::from_rows(&[[1000.0, 0.0]]).unwrap(), 1.0).unwrap();
        assert!(s.is_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-15);
        let s = row_softmax(&Tensor::from_rows(&[[1.0, 2.0]]).unwrap(), 0.5).unwrap();
        // 1/(1+e^2), e^2/(1+e^2)
        assert!((s.data()[0] - 0.11920292202211755).abs() < 1e-15);
        assert!((s.data()[1] - 0.8807970779778823).abs() < 1e-15);
        assert!(matches!(row_softmax(&s, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn normalize_examples() {
        let t = l2_normalize_rows(
            &Tensor::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap(),
            1e-12,
        )
        .unwrap();
        assert!((t.data()[0] - 0.6).abs() < 1e-15);
        assert!((t.data()[1] - 0.8).abs() < 1e-15);
        assert_eq!(&t.data()[2..], &[0.0, 0.0]);
        let mut rng = Rng::new(3);
        let r = random(&mut rng, &[1, 9]);
        let n = l2_normalize_rows(&r, 1e-12).unwrap();
        assert!((row_norm(n.row(0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_agrees_with_softmax() {
        let mut rng = Rng::new(5);
        let m = random(&mut rng, &[4, 6]);
        let a = log_softmax_rows(&m, 0.7).unwrap();
        let b = row_softmax(&m, 0.7).unwrap().map(libm::log);
        assert!(a.max_abs_diff(&b) < 1e-14);
        assert!(a.data().iter().all(|&v| v <= 0.0));
    }

    fn matrix(max_n: usize, max_m: usize, range: f64) -> impl Strategy<Value = Tensor> {
        (1..=max_n, 1..=max_m).prop_flat_map(move |(n, m)| {
            proptest::collection::vec(-range..range, n * m)
                .prop_map(move |d| Tensor::new(&[n, m], d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(m in matrix(5, 6, 1e3), t in 0.05f64..5.0) {
            let s = row_softmax(&m, t).unwrap();
            for i in 0..s.rows() {
                let row = s.row(i);
                prop_assert!(row.iter().all(|&v| v >= 0.0 && v <= 1.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_shift_invariant(m in matrix(4, 5, 10.0), shift in -50.0f64..50.0, t in 0.1f64..3.0) {
            let shifted = m.map(|v| v + shift);
            let a = row_softmax(&m, t).unwrap();
            let b = row_softmax(&shifted, t).unwrap();
            prop_assert!(a.max_abs_diff(&b) < 1e-12);
        }

        #[test]
        fn matmul_is_associative(seed in any::<u64>(), n in 1usize..6, k in 1usize..6, l in 1usize..6, m in 1usize..6) {
            let mut rng = Rng::new(seed);
            let a = random(&mut rng, &[n, k]);
            let b = random(&mut rng, &[k, l]);
            let c = random(&mut rng, &[l, m]);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = left.data().iter().fold(1.0f64, |s, v| s.max(v.abs()));
            prop_assert!(left.max_abs_diff(&right) <= 1e-9 * scale);
        }

        #[test]
        fn normalize_is_idempotent(m in matrix(5, 5, 100.0)) {
            let once = l2_normalize_rows(&m, 1e-12).unwrap();
            let twice = l2_normalize_rows(&once, 1e-12).unwrap();
            prop_assert!(once.max_abs_diff(&twice) < 1e-12);
        }
    }
}
