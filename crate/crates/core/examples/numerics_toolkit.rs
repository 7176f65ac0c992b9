//! Divergences, a finite-difference gradient check and a warm-up + cosine Adam run.

use protosteer::numerics::{adam_step, finite_diff_grad, jsd, kl_divergence, relative_error, softmax, AdamState, LrSchedule};

fn main() -> protosteer::Result<()> {
    let p = softmax(&[2.0, 0.5, -1.0, 0.0]);
    let q = softmax(&[1.5, 0.7, -0.5, 0.2]);
    println!(
        "KL(p||q) {:.5}, KL(q||p) {:.5}, JSD {:.5} (bound ln 2 = {:.5})",
        kl_divergence(&p, &q)?,
        kl_divergence(&q, &p)?,
        jsd(&p, &q)?,
        2f64.ln()
    );

    // f(x) = sum_i x_i^2 sin(x_i), gradient 2 x sin x + x^2 cos x
    let f = |x: &[f64]| x.iter().map(|v| v * v * v.sin()).sum::<f64>();
    let x = [0.3, -1.2, 2.0];
    let fd = finite_diff_grad(f, &x, 1e-6);
    for (xi, n) in x.iter().zip(&fd) {
        let a = 2.0 * xi * xi.sin() + xi * xi * xi.cos();
        println!(
            "x {xi:+.2}: analytic {a:+.8} numeric {n:+.8} rel err {:.1e}",
            relative_error(a, *n, 1e-12)
        );
    }

    let total = 400;
    let sched = LrSchedule::new(0.05, 20, total)?;
    let mut w = vec![3.0, -2.0];
    let mut state = AdamState::new(2);
    for step in 1..=total {
        let g = [2.0 * (w[0] - 1.0), 2.0 * (w[1] + 0.5)];
        adam_step(&mut w, &g, &mut state, sched.lr_at(step))?;
    }
    println!("adam minimum of (w0-1)^2 + (w1+0.5)^2: {w:.4?}");
    Ok(())
}
