use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Mean of a sample with a percentile bootstrap interval for it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl BootstrapInterval {
    /// Whether zero lies strictly outside the interval.
    pub fn excludes_zero(&self) -> bool {
        self.lo > 0.0 || self.hi < 0.0
    }
}

/// Percentile bootstrap of the mean at the given two-sided `level` (e.g. 0.95).
pub fn bootstrap_mean(sample: &[f64], resamples: usize, level: f64, seed: u64) -> BootstrapInterval {
    let n = sample.len();
    if n == 0 {
        return BootstrapInterval {
            mean: f64::NAN,
            lo: f64::NAN,
            hi: f64::NAN,
            n,
        };
    }
    let mean = sample.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| sample[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let pick = |q: f64| means[((q * (means.len() - 1) as f64).round() as usize).min(means.len() - 1)];
    BootstrapInterval {
        mean,
        lo: pick(alpha),
        hi: pick(1.0 - alpha),
        n,
    }
}
