use proptest::collection::vec;
use proptest::prelude::*;
use protosteer::gridworld::Target;
use protosteer::numerics::{finite_diff_grad, relative_error};
use protosteer::steering::{prototype_distribution, steer_latent, steer_latent_anchored, steering_gradient, PrototypeSet, Space, SteerConfig};

fn protos(flat: &[f64], dim: usize) -> PrototypeSet {
    let centers: Vec<Vec<f64>> = flat.chunks(dim).take(3).map(<[f64]>::to_vec).collect();
    PrototypeSet::new(
        0,
        Space::Latent,
        vec!["short".into(), "safe".into(), "long".into()],
        vec![1; 3],
        dim,
        centers,
    )
    .unwrap()
}

fn cfg(target: Target, eta: f64) -> SteerConfig {
    SteerConfig {
        eta,
        target,
        max_steps: 200,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distribution_sums_to_one(c in vec(-2.0f64..2.0, 12), z in vec(-2.0f64..2.0, 4)) {
        let p = protos(&c, 4);
        let (d, pr) = prototype_distribution(&z, &p).unwrap();
        prop_assert!(d.iter().all(|v| *v >= 0.0));
        prop_assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences(c in vec(-1.0f64..1.0, 12), z in vec(-1.0f64..1.0, 4), t in 0usize..3) {
        let p = protos(&c, 4);
        let g = steering_gradient(&z, &p, t).unwrap();
        let f = |x: &[f64]| prototype_distribution(x, &p).unwrap().1[t].ln();
        for (a, b) in g.iter().zip(finite_diff_grad(f, &z, 1e-6)) {
            prop_assert!(relative_error(*a, b, 1e-6) < 1e-5);
        }
    }

    #[test]
    fn small_steps_never_lower_the_target(c in vec(-1.0f64..1.0, 12), z in vec(-1.0f64..1.0, 4), t in 0usize..3) {
        let p = protos(&c, 4);
        let (_, trace) = steer_latent(&z, &p, &cfg(Target::ALL[t], 1e-3)).unwrap();
        let lp = trace.target_log_probs();
        prop_assert!(lp.windows(2).all(|w| w[1] >= w[0] - 1e-15));
    }

    #[test]
    fn heavy_anchor_pins_the_latent(c in vec(-1.0f64..1.0, 12), z in vec(-1.0f64..1.0, 4)) {
        let p = protos(&c, 4);
        let (z_star, _) = steer_latent_anchored(&z, &p, &cfg(Target::Safe, 1e-7), 1e6).unwrap();
        let moved = z_star.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(moved <= 1e-3);
    }

    #[test]
    fn zero_step_size_is_a_fixed_point(c in vec(-1.0f64..1.0, 12), z in vec(-1.0f64..1.0, 4)) {
        let p = protos(&c, 4);
        let (z_star, _) = steer_latent(&z, &p, &cfg(Target::Long, 0.0)).unwrap();
        prop_assert_eq!(z_star, z);
    }
}
