use proptest::collection::vec;
use proptest::prelude::*;
use protosteer::numerics::{finite_diff_grad, relative_error, Matrix};
use protosteer::sae::{Regularizer, SparseCoder};

fn kind(l1: bool) -> Regularizer {
    if l1 {
        Regularizer::L1
    } else {
        Regularizer::L2
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn codes_are_non_negative_and_decoding_is_linear(x in vec(-3.0f64..3.0, 4), seed in any::<u64>(), l1 in any::<bool>()) {
        let c = SparseCoder::init(0, 0, 4, kind(l1), 1e-2, 1e-4, seed).unwrap();
        let z = c.encode(&x).unwrap();
        prop_assert!(z.iter().all(|v| *v >= 0.0));
        let two: Vec<f64> = z.iter().map(|v| 2.0 * v).collect();
        for (a, b) in c.decode(&two).unwrap().iter().zip(c.decode(&z).unwrap()) {
            prop_assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences(data in vec(-1.0f64..1.0, 24), seed in any::<u64>(), l1 in any::<bool>()) {
        let s = Matrix::from_vec(6, 4, data).unwrap();
        let c = SparseCoder::init(0, 0, 4, kind(l1), 5e-2, 1e-2, seed).unwrap();
        let (_, g) = c.loss_and_grads(&s).unwrap();
        let analytic = [g.w_e, g.b_e, g.w_d].concat();
        let params = c.flat_params();
        let f = |p: &[f64]| {
            let mut m = c.clone();
            m.set_flat_params(p);
            m.loss_and_grads(&s).unwrap().0.total()
        };
        let fd = finite_diff_grad(f, &params, 1e-6);
        let bad = analytic.iter().zip(&fd).filter(|(a, b)| relative_error(**a, **b, 1e-6) > 1e-4).count();
        // a probe sitting on a ReLU kink may disagree; nearly all must match
        prop_assert!(bad <= 1, "{} mismatches", bad);
    }
}
