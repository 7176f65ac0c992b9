use crate::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-9;

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::contract(format!("{name} has negative or non-finite mass")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::contract(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

/// `KL(p || q)` in nats with `0 ln(0/x) = 0`. Infinite when `p` has mass where `q` has none.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(format!("supports of size {} and {}", p.len(), q.len())));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    Ok(p.iter().zip(q).filter(|(pi, _)| **pi > 0.0).map(|(pi, qi)| pi * (pi / qi).ln()).sum())
}

/// Jensen-Shannon divergence in nats, bounded by `ln 2`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(format!("supports of size {} and {}", p.len(), q.len())));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    // symmetric accumulation so that jsd(p, q) and jsd(q, p) round identically
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        let ta = if a > 0.0 { a * (a / m).ln() } else { 0.0 };
        let tb = if b > 0.0 { b * (b / m).ln() } else { 0.0 };
        total += 0.5 * (ta + tb);
    }
    Ok(total.clamp(0.0, std::f64::consts::LN_2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn jsd_of_identical_is_zero() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(jsd(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn jsd_of_disjoint_deltas_is_ln2() {
        let p = [1.0, 0.0, 0.0];
        let q = [0.0, 0.0, 1.0];
        assert!((jsd(&p, &q).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn jsd_matches_two_kl_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = random_dist(&mut rng, 7);
            let q = random_dist(&mut rng, 7);
            let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
            let expected = 0.5 * kl_divergence(&p, &m).unwrap() + 0.5 * kl_divergence(&q, &m).unwrap();
            let got = jsd(&p, &q).unwrap();
            assert!((got - expected).abs() < 1e-12);
            assert!((got - jsd(&q, &p).unwrap()).abs() <= 1e-12);
            assert!((0.0..=std::f64::consts::LN_2).contains(&got));
        }
    }

    #[test]
    fn invalid_distributions_rejected() {
        assert!(matches!(jsd(&[0.5, 0.6], &[0.5, 0.5]), Err(Error::Contract(_))));
        assert!(matches!(jsd(&[-0.5, 1.5], &[0.5, 0.5]), Err(Error::Contract(_))));
        assert!(matches!(jsd(&[1.0], &[0.5, 0.5]), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let row: Vec<f64> = (0..9).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let s: f64 = softmax(&row).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
            let ls = log_softmax(&row);
            for (a, b) in ls.iter().zip(softmax(&row)) {
                assert!((a.exp() - b).abs() < 1e-12);
            }
        }
    }
}
