//! Phase-conditioned action chunking for bimanual magnetic micromanipulation.
//!
//! * [`magsim`]: the simulated world, scripted expert and success checks.
//! * [`dataset`]: demonstration episodes and training samples.
//! * [`nn`]: a small reverse-mode autodiff tape over dense matrices.
//! * [`policy`]: encoder, phase head and chunk decoder.
//! * [`runtime`]: receding-horizon execution with temporal ensembling.
//! * [`train`]: optimizer, schedule, training loop and gradient checks.
//! * [`eval`]: offline metrics and closed-loop trials.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod magsim;
pub mod nn;
pub mod policy;
pub mod runtime;
pub mod train;

pub use error::{Error, Result};

/// Actions predicted per forward pass.
pub const CHUNK_LEN: usize = 5;
/// Dual-arm action width `[dxL, dyL, dxR, dyR]`.
pub const ACTION_DIM: usize = 4;
/// Observation frames fed to the encoder.
pub const HISTORY_LEN: usize = 4;
