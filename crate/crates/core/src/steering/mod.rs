//! Prototype construction, the prototype softmax, gradient-ascent latent steering
//! and the comparison arms.

mod optimize;
mod policy;
mod prototype;
mod trace;

pub use optimize::{
    direct_center_assign, prototype_distribution, static_vector_sparse, steer_dense, steer_latent, steer_latent_anchored, steering_gradient,
    SteerConfig,
};
pub use policy::{
    latent_offset_to_queries, pooled_residual, static_vector_caa, static_vector_query, steered_generate, Method, SteeredOutput, SteeringKit,
};
pub use prototype::{
    compute_dense_prototypes, compute_prototypes, pooled_latent, support_from_records, tap_sequence, PrototypeSet, Space, SupportExample,
    PROTOTYPE_FORMAT_VERSION,
};
pub use trace::{SteerStep, SteerTrace, Termination};
