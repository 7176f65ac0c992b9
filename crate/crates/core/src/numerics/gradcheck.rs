/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps the measure defined when both
/// values are numerically zero.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Aggregate of an analytic-versus-numeric comparison.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheck {
    pub probes: usize,
    pub max_rel_error: f64,
    pub failures: usize,
}

impl GradCheck {
    pub fn record(&mut self, analytic: f64, numeric: f64, floor: f64, tol: f64) {
        let e = relative_error(analytic, numeric, floor);
        self.probes += 1;
        self.max_rel_error = self.max_rel_error.max(e);
        if e > tol || !e.is_finite() {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}
