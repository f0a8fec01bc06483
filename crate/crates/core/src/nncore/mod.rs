//! Minimal numeric core: tensors, MLPs, Adam, seeded randomness and a
//! finite-difference gradient oracle.

pub mod adam;
pub mod gradcheck;
pub mod mlp;
pub mod rng;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{fd_gradient, fd_gradient_flat, max_relative_error};
pub use mlp::{Activation, ForwardCache, LayerParams, Mlp, MlpParams, MlpSpec, Parameters};
pub use rng::{RandomStream, Rng};
pub use tensor::Tensor;
