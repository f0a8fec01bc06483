//! Symmetric Wasserstein autoencoders with a learnable mixture prior over
//! pseudo-inputs, an exact assignment-based optimal-transport oracle, and the
//! evaluation protocols used to judge the learned latent space.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nncore;
pub mod objective;
pub mod ot;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{ModelConfig, SwaeModel};
pub use objective::{LossBreakdown, LossWeights};
pub use trainer::{train, NearestMode, TrainConfig, TrainLog};
