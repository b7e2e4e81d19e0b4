//! Demonstration data: generation, storage, normalization, sampling and
//! augmentation, plus the prompt bank.

pub mod augment;
pub mod episode;
pub mod generate;
pub mod prompts;
pub mod sample;
pub mod stats;

pub use augment::{augment_observation, AugmentConfig};
pub use episode::{Dataset, DatasetMeta, EpisodeInfo, EpisodeRecord, Frame, Split};
pub use generate::{generate, generate_dataset, GenConfig};
pub use prompts::{build_prompt_bank, PromptBank, N_PROMPTS};
pub use sample::{all_samples, make_sample, TrainingSample};
pub use stats::{compute_norm_stats, denormalize_action, normalize_action, NormStats};
