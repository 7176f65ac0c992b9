//! Dense f64 linear algebra, losses, optimisers, schedules, divergences and a
//! finite-difference gradient oracle. All gradients in the crate are hand-derived
//! and checked against [`finite_diff_grad`].

mod divergence;
mod gradcheck;
mod loss;
mod matrix;
mod optim;

pub use divergence::{jsd, kl_divergence, log_softmax, softmax};
pub use gradcheck::{finite_diff_grad, relative_error, GradCheck};
pub use loss::{cross_entropy, masked_cross_entropy};
pub use matrix::{gemm, Matrix};
pub use optim::{adam_step, AdamState, LrSchedule};
