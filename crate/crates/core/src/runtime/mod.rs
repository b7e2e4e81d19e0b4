//! Receding-horizon execution with temporal ensembling.

pub mod buffer;
pub mod executor;

pub use buffer::{ensemble_weight, ChunkBuffer, ChunkEntry, Ensembled, DEFAULT_LAMBDA};
pub use executor::{
    read_trajectory, run_rollout, Executor, Rollout, RolloutConfig, StateSnapshot, StepRecord,
};
