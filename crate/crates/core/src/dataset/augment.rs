//! Photometric augmentation of observation images, plus history collapse.
//! Features, actions and prompts are never changed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sample::TrainingSample;
use crate::magsim::Observation;
use crate::HISTORY_LEN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub brightness_prob: f64,
    pub brightness_range: (f64, f64),
    pub contrast_prob: f64,
    pub contrast_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            brightness_prob: 0.5,
            brightness_range: (0.85, 1.15),
            contrast_prob: 0.3,
            contrast_range: (0.90, 1.10),
        }
    }
}

/// `clamp(((g - 0.5) * contrast + 0.5) * brightness, 0, 1)` on every grid cell.
pub fn apply_photometric(obs: &Observation, brightness: f64, contrast: f64) -> Observation {
    Observation {
        features: obs.features.clone(),
        grid: obs.grid.as_ref().map(|g| {
            g.iter()
                .map(|&v| (((v - 0.5) * contrast + 0.5) * brightness).clamp(0.0, 1.0))
                .collect()
        }),
    }
}

/// Draws the two factors (always consuming the same amount of randomness)
/// and applies them.
pub fn augment_observation_with<R: Rng + ?Sized>(
    obs: &Observation,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Observation {
    let (b_lo, b_hi) = cfg.brightness_range;
    let (c_lo, c_hi) = cfg.contrast_range;
    let use_b = rng.gen::<f64>() < cfg.brightness_prob;
    let b = rng.gen_range(b_lo..=b_hi);
    let use_c = rng.gen::<f64>() < cfg.contrast_prob;
    let c = rng.gen_range(c_lo..=c_hi);
    if !use_b && !use_c {
        return obs.clone();
    }
    apply_photometric(
        obs,
        if use_b { b } else { 1.0 },
        if use_c { c } else { 1.0 },
    )
}

pub fn augment_observation<R: Rng + ?Sized>(obs: &Observation, rng: &mut R) -> Observation {
    augment_observation_with(obs, &AugmentConfig::default(), rng)
}

/// Every history slot set to the current frame, matching the executor's
/// padding at the start of a rollout.
pub fn collapse_history(sample: &TrainingSample) -> TrainingSample {
    let last = HISTORY_LEN - 1;
    TrainingSample {
        obs_history: vec![sample.obs_history[last].clone(); HISTORY_LEN],
        state_history: [sample.state_history[last]; HISTORY_LEN],
        ..sample.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn obs(values: Vec<f64>) -> Observation {
        Observation {
            features: vec![0.25, -0.5],
            grid: Some(values),
        }
    }

    #[test]
    fn skipped_is_identity() {
        let cfg = AugmentConfig {
            brightness_prob: 0.0,
            contrast_prob: 0.0,
            ..AugmentConfig::default()
        };
        let o = obs(vec![0.0, 0.3, 1.0]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment_observation_with(&o, &cfg, &mut rng), o);
    }

    #[test]
    fn brightness_clamps() {
        let o = obs(vec![1.0, 0.9]);
        let a = apply_photometric(&o, 1.15, 1.0);
        assert_eq!(a.grid.unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn contrast_midpoint_fixed() {
        let o = obs(vec![0.5]);
        assert_eq!(apply_photometric(&o, 1.0, 0.9).grid.unwrap(), vec![0.5]);
    }

    #[test]
    fn features_untouched_and_range_kept() {
        let o = obs((0..100).map(|i| i as f64 / 99.0).collect());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let a = augment_observation(&o, &mut rng);
            assert_eq!(a.features, o.features);
            assert!(a.grid.unwrap().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn collapsed_history_repeats_the_current_frame() {
        use crate::dataset::sample::TrainingSample;
        use crate::magsim::{PhaseLabel, TaskId};
        let s = TrainingSample {
            obs_history: (0..HISTORY_LEN)
                .map(|i| Observation {
                    features: vec![i as f64],
                    grid: None,
                })
                .collect(),
            state_history: std::array::from_fn(|i| [i as f64; 4]),
            state: [3.0; 4],
            prompt_id: 4,
            task_id: TaskId::A,
            chunk: [[1.0; 4]; crate::CHUNK_LEN],
            phase: PhaseLabel::Transport,
        };
        let c = collapse_history(&s);
        assert!(c.obs_history.iter().all(|o| o.features == vec![3.0]));
        assert!(c.state_history.iter().all(|r| *r == [3.0; 4]));
        assert_eq!(
            (c.chunk, c.phase, c.prompt_id, c.state),
            (s.chunk, s.phase, s.prompt_id, s.state)
        );
    }
}
