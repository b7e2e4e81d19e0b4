//! Phase-conditioned chunking policy.

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod model;

pub use checkpoint::{load_policy, save_policy, Checkpoint};
pub use config::ModelConfig;
pub use loss::{compute_loss, smooth_l1, LossParts};
pub use model::{ActionChunk, MultimodalMemory, PhaseOutput, Policy, PolicyInput, Prediction};
