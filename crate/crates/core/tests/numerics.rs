use proptest::collection::vec;
use proptest::prelude::*;
use protosteer::numerics::{gemm, jsd, kl_divergence, log_softmax, softmax, Matrix};

fn naive(a: &Matrix, b: &Matrix) -> Matrix {
    let mut c = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            c.set(i, j, (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum());
        }
    }
    c
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(x in vec(-50.0f64..50.0, 1..20)) {
        let p = softmax(&x);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        let lp = log_softmax(&x);
        for (a, b) in p.iter().zip(&lp) {
            prop_assert!((a.ln() - b).abs() < 1e-9 || *a == 0.0);
        }
    }

    #[test]
    fn softmax_ignores_shifts(x in vec(-10.0f64..10.0, 1..10), s in -100.0f64..100.0) {
        let shifted: Vec<f64> = x.iter().map(|v| v + s).collect();
        for (a, b) in softmax(&x).iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn divergences_are_bounded_and_symmetric(x in vec(-5.0f64..5.0, 2..12), y in vec(-5.0f64..5.0, 2..12)) {
        let n = x.len().min(y.len());
        let (p, q) = (softmax(&x[..n]), softmax(&y[..n]));
        let j = jsd(&p, &q).unwrap();
        prop_assert!((0.0..=std::f64::consts::LN_2 + 1e-12).contains(&j));
        prop_assert!((j - jsd(&q, &p).unwrap()).abs() < 1e-12);
        prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-12);
        prop_assert!(jsd(&p, &p).unwrap().abs() < 1e-15);
    }

    #[test]
    fn products_match_the_naive_loop(m in 1usize..7, k in 1usize..7, n in 1usize..7, seed in any::<u64>()) {
        let val = |i: usize| ((seed.wrapping_add(i as u64) % 1000) as f64 / 500.0) - 1.0;
        let a = Matrix::from_vec(m, k, (0..m * k).map(val).collect()).unwrap();
        let b = Matrix::from_vec(k, n, (0..k * n).map(|i| val(i + 7)).collect()).unwrap();
        let c = a.matmul(&b).unwrap();
        let e = naive(&a, &b);
        for (x, y) in c.data().iter().zip(e.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        // the transposed-operand path agrees too
        let mut ct = vec![0.0; m * n];
        gemm(m, k, n, 1.0, a.transpose().data(), true, b.transpose().data(), true, 0.0, &mut ct);
        for (x, y) in ct.iter().zip(e.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
