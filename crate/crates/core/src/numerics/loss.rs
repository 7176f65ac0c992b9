use super::divergence::softmax_in_place;
use super::matrix::Matrix;
use crate::{Error, Result};

/// Mean negative log-likelihood over rows and its gradient `(softmax - onehot) / n`.
pub fn cross_entropy(logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    let t: Vec<Option<usize>> = targets.iter().map(|&t| Some(t)).collect();
    masked_cross_entropy(logits, &t)
}

/// Cross-entropy over the rows whose target is `Some`, averaged over those rows.
/// Masked rows get a zero gradient. With no active rows the loss is zero.
pub fn masked_cross_entropy(logits: &Matrix, targets: &[Option<usize>]) -> Result<(f64, Matrix)> {
    if targets.len() != logits.rows() {
        return Err(Error::shape(format!("{} targets for {} logit rows", targets.len(), logits.rows())));
    }
    let vocab = logits.cols();
    if let Some(bad) = targets.iter().flatten().find(|t| **t >= vocab) {
        return Err(Error::contract(format!("target index {bad} outside vocabulary of {vocab}")));
    }
    let active = targets.iter().filter(|t| t.is_some()).count();
    let mut grad = Matrix::zeros(logits.rows(), vocab);
    if active == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / active as f64;
    let mut loss = 0.0;
    for (r, t) in targets.iter().enumerate() {
        let Some(t) = *t else { continue };
        let row = grad.row_mut(r);
        row.copy_from_slice(logits.row(r));
        softmax_in_place(row);
        loss -= row[t].max(f64::MIN_POSITIVE).ln();
        row[t] -= 1.0;
        for g in row.iter_mut() {
            *g *= inv;
        }
    }
    Ok((loss * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_ln_v() {
        let (loss, _) = cross_entropy(&Matrix::zeros(3, 7), &[0, 3, 6]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 50.0] {
            let logits = Matrix::from_rows(&[vec![margin, 0.0, 0.0], vec![0.0, margin, 0.0]]).unwrap();
            let (loss, _) = cross_entropy(&logits, &[0, 1]).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn out_of_range_target() {
        assert!(matches!(cross_entropy(&Matrix::zeros(1, 3), &[3]), Err(Error::Contract(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (rows, cols) = (4, 5);
        let targets = [Some(1), None, Some(4), Some(0)];
        let x: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let f = |v: &[f64]| {
            masked_cross_entropy(&Matrix::from_vec(rows, cols, v.to_vec()).unwrap(), &targets)
                .unwrap()
                .0
        };
        let (_, grad) = masked_cross_entropy(&Matrix::from_vec(rows, cols, x.clone()).unwrap(), &targets).unwrap();
        let num = finite_diff_grad(f, &x, 1e-5);
        for (a, n) in grad.data().iter().zip(&num) {
            assert!(relative_error(*a, *n, 1e-8) < 1e-6, "{a} vs {n}");
        }
        assert!(grad.row(1).iter().all(|g| *g == 0.0));
    }
}
