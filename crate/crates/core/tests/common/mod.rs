#![allow(dead_code)]

use magchunk::dataset::{all_samples, generate, Dataset, GenConfig, Split, TrainingSample};

pub fn small_dataset(seed: u64) -> Dataset {
    generate(&GenConfig {
        n_episodes: 12,
        seed,
        ..GenConfig::default()
    })
    .unwrap()
}

pub fn train_samples(ds: &Dataset) -> Vec<TrainingSample> {
    all_samples(ds.episodes_in(Split::Train), &ds.stats).unwrap()
}
