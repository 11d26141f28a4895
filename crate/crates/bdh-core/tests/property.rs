//! Property tests for the spec-level invariants of the tensor op set.

use bdh_core::tensor::{layer_norm, matmul, rope_rotate, Tensor};
use proptest::prelude::*;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f32>> {
    proptest::collection::vec(-2.0f32..2.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rope_preserves_pair_norms(
        data in finite_vec(12),
        freqs in proptest::collection::vec(0.0f32..3.0, 6),
        position in 0u64..100_000,
    ) {
        let x = Tensor::new(vec![1, 12], data.clone()).unwrap();
        let f = Tensor::new(vec![6], freqs).unwrap();
        let out = rope_rotate(&x, position, &f).unwrap();
        for p in 0..6 {
            let before = (data[2 * p].powi(2) + data[2 * p + 1].powi(2)).sqrt();
            let after = (out.data()[2 * p].powi(2) + out.data()[2 * p + 1].powi(2)).sqrt();
            prop_assert!((before - after).abs() < 1e-5, "pair {p}: {before} vs {after}");
        }
    }

    #[test]
    fn layer_norm_output_moments(data in finite_vec(48)) {
        let eps = 1e-5f32;
        let spread = {
            let mean = data.iter().sum::<f32>() / 48.0;
            data.iter().map(|v| (v - mean).abs()).fold(0.0f32, f32::max)
        };
        prop_assume!(spread > 10.0 * eps);
        let v = Tensor::new(vec![1, 48], data).unwrap();
        let out = layer_norm(&v, eps).unwrap();
        let mean: f64 = out.data().iter().map(|&x| x as f64).sum::<f64>() / 48.0;
        let var: f64 =
            out.data().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / 48.0;
        prop_assert!(mean.abs() < 1e-6, "mean {mean}");
        prop_assert!((var - 1.0).abs() < 1e-3, "var {var}");
    }

    #[test]
    fn matmul_is_associative_on_small_chains(
        a in finite_vec(16),
        b in finite_vec(16),
        c in finite_vec(16),
        d in finite_vec(16),
    ) {
        let t = |v: Vec<f32>| Tensor::new(vec![4, 4], v).unwrap();
        let (a, b, c, d) = (t(a), t(b), t(c), t(d));
        let left = matmul(&matmul(&matmul(&a, &b).unwrap(), &c).unwrap(), &d).unwrap();
        let right = matmul(&a, &matmul(&b, &matmul(&c, &d).unwrap()).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            let denom = x.abs().max(y.abs()).max(1.0);
            prop_assert!((x - y).abs() / denom < 1e-4, "{x} vs {y}");
        }
    }

    #[test]
    fn relu_output_is_nonnegative_and_idempotent(data in finite_vec(33)) {
        let x = Tensor::new(vec![33], data).unwrap();
        let r = bdh_core::tensor::relu(&x);
        prop_assert!(r.data().iter().all(|&v| v >= 0.0));
        let rr = bdh_core::tensor::relu(&r);
        prop_assert_eq!(r.data(), rr.data());
    }
}
