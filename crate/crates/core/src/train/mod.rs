//! Training: schedule, optimizer, loop and gradient verification.

pub mod config;
pub mod gradcheck;
pub mod optim;
pub mod trainer;

pub use config::{cosine_lr, TrainConfig};
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{optimizer_step, AdamHyper, AdamState, StepOutcome};
pub use trainer::{evaluate_split, train_loop, LogEntry, SplitMetrics, TrainOutcome};
