use serde::{Deserialize, Serialize};

use crate::numerics::{jsd, softmax, Matrix};
use crate::{Error, Result};

/// Baseline positions with a smaller activation norm are left out of the mean.
pub const MIN_BASE_NORM: f64 = 1e-12;

/// Per-layer mean relative deviation between a steered and a baseline pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDeviationProfile {
    pub intervention_layer: usize,
    /// One value per layer, starting at layer 0.
    pub deltas: Vec<f64>,
    pub descriptor: String,
}

impl LayerDeviationProfile {
    /// Mean over layers at or after the intervention site.
    pub fn downstream_mean(&self) -> f64 {
        let tail = &self.deltas[self.intervention_layer.min(self.deltas.len())..];
        if tail.is_empty() {
            0.0
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        }
    }
}

/// `delta_l = mean_t |h_steered - h_base| / |h_base|` on post-block residuals.
pub fn activation_deviation(base: &[Matrix], steered: &[Matrix], intervention_layer: usize) -> Result<LayerDeviationProfile> {
    if base.len() != steered.len() {
        return Err(Error::shape(format!("{} baseline layers, {} steered", base.len(), steered.len())));
    }
    let mut deltas = Vec::with_capacity(base.len());
    for (b, s) in base.iter().zip(steered) {
        if b.shape() != s.shape() {
            return Err(Error::shape(format!("layer shapes {:?} and {:?}", b.shape(), s.shape())));
        }
        let mut total = 0.0;
        let mut count = 0;
        for t in 0..b.rows() {
            let norm = b.row(t).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < MIN_BASE_NORM {
                continue;
            }
            let diff = b.row(t).iter().zip(s.row(t)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            total += diff / norm;
            count += 1;
        }
        deltas.push(if count == 0 { 0.0 } else { total / count as f64 });
    }
    Ok(LayerDeviationProfile {
        intervention_layer,
        deltas,
        descriptor: String::new(),
    })
}

/// Jensen-Shannon divergence between the softmax of two logit rows.
pub fn next_token_jsd(base: &[f64], steered: &[f64]) -> Result<f64> {
    if base.len() != steered.len() {
        return Err(Error::shape(format!("logit rows of {} and {}", base.len(), steered.len())));
    }
    jsd(&softmax(base), &softmax(steered))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layers(seed: f64) -> Vec<Matrix> {
        (0..3)
            .map(|l| Matrix::from_vec(4, 3, (0..12).map(|i| (i as f64 + seed + l as f64).sin()).collect()).unwrap())
            .collect()
    }

    #[test]
    fn identical_runs_have_no_deviation() {
        let a = layers(0.3);
        let p = activation_deviation(&a, &a, 1).unwrap();
        assert_eq!(p.deltas, vec![0.0; 3]);
    }

    #[test]
    fn doubling_gives_unit_deviation() {
        let a = layers(0.3);
        let mut b = a.clone();
        b[2] = a[2].scale(2.0);
        let p = activation_deviation(&a, &b, 2).unwrap();
        assert_eq!(&p.deltas[..2], &[0.0, 0.0]);
        assert!((p.deltas[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deviation_is_scale_free() {
        let (a, b) = (layers(0.3), layers(0.9));
        let p = activation_deviation(&a, &b, 0).unwrap();
        let scaled = |v: &[Matrix]| v.iter().map(|m| m.scale(7.5)).collect::<Vec<_>>();
        let q = activation_deviation(&scaled(&a), &scaled(&b), 0).unwrap();
        for (x, y) in p.deltas.iter().zip(&q.deltas) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_baseline_positions_are_skipped() {
        let base = vec![Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap()];
        let steered = vec![Matrix::from_rows(&[vec![5.0, 5.0], vec![1.0, 1.0]]).unwrap()];
        let p = activation_deviation(&base, &steered, 0).unwrap();
        assert!((p.deltas[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jsd_on_logits() {
        assert_eq!(next_token_jsd(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let far = next_token_jsd(&[100.0, 0.0], &[0.0, 100.0]).unwrap();
        assert!((far - std::f64::consts::LN_2).abs() < 1e-9);
        let (a, b) = ([0.3, -1.0, 2.0], [1.0, 0.5, -0.5]);
        assert!((next_token_jsd(&a, &b).unwrap() - next_token_jsd(&b, &a).unwrap()).abs() < 1e-15);
        assert!(next_token_jsd(&a, &[0.0]).is_err());
    }
}
