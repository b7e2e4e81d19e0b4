use serde::{Deserialize, Serialize};

use super::episode::EpisodeRecord;
use crate::error::{Error, Result};
use crate::magsim::{ArmVec, Observation};

pub const STD_FLOOR: f64 = 1e-6;

/// Per-dimension z-score statistics of executed actions, plus the same for
/// observation features. Empty feature statistics leave features unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: ArmVec,
    pub std: ArmVec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub obs_mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub obs_std: Vec<f64>,
}

impl Default for NormStats {
    fn default() -> Self {
        NormStats {
            mean: [0.0; 4],
            std: [1.0; 4],
            obs_mean: Vec::new(),
            obs_std: Vec::new(),
        }
    }
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        let ok = self
            .mean
            .iter()
            .chain(&self.obs_mean)
            .all(|m| m.is_finite())
            && self
                .std
                .iter()
                .chain(&self.obs_std)
                .all(|s| s.is_finite() && *s >= STD_FLOOR)
            && self.obs_mean.len() == self.obs_std.len();
        if ok {
            Ok(())
        } else {
            Err(Error::Dataset(format!(
                "invalid normalization stats {self:?}"
            )))
        }
    }

    pub fn normalize(&self, a: &ArmVec) -> ArmVec {
        std::array::from_fn(|i| (a[i] - self.mean[i]) / self.std[i])
    }

    pub fn denormalize(&self, z: &ArmVec) -> ArmVec {
        std::array::from_fn(|i| z[i] * self.std[i] + self.mean[i])
    }

    /// Standardized copy of a feature vector.
    pub fn normalize_features(&self, f: &[f64]) -> Result<Vec<f64>> {
        if self.obs_mean.is_empty() {
            return Ok(f.to_vec());
        }
        if f.len() != self.obs_mean.len() {
            return Err(Error::Shape(format!(
                "observation has {} features, statistics cover {}",
                f.len(),
                self.obs_mean.len()
            )));
        }
        Ok(f.iter()
            .zip(self.obs_mean.iter().zip(&self.obs_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn normalize_observation(&self, obs: &Observation) -> Result<Observation> {
        Ok(Observation {
            features: self.normalize_features(&obs.features)?,
            grid: obs.grid.clone(),
        })
    }

    /// Equal up to a relative `tol` in every statistic.
    pub fn approx_eq(&self, other: &NormStats, tol: f64) -> bool {
        let close = |a: &[f64], b: &[f64]| {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
        };
        close(&self.mean, &other.mean)
            && close(&self.std, &other.std)
            && close(&self.obs_mean, &other.obs_mean)
            && close(&self.obs_std, &other.obs_std)
    }
}

pub fn normalize_action(a: &ArmVec, stats: &NormStats) -> ArmVec {
    stats.normalize(a)
}

pub fn denormalize_action(z: &ArmVec, stats: &NormStats) -> ArmVec {
    stats.denormalize(z)
}

/// Streaming (Welford) mean and population standard deviation over every
/// action and observation feature vector of the given episodes. Callers pass
/// training episodes only.
pub fn compute_norm_stats<'a, I>(train_episodes: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a EpisodeRecord>,
{
    let mut n = 0usize;
    let mut mean = [0.0f64; 4];
    let mut m2 = [0.0f64; 4];
    let mut episodes = 0usize;
    let mut obs_mean: Vec<f64> = Vec::new();
    let mut obs_m2: Vec<f64> = Vec::new();
    for ep in train_episodes {
        episodes += 1;
        for f in &ep.frames {
            n += 1;
            for d in 0..4 {
                let delta = f.action[d] - mean[d];
                mean[d] += delta / n as f64;
                m2[d] += delta * (f.action[d] - mean[d]);
            }
            if n == 1 {
                obs_mean = vec![0.0; f.obs.features.len()];
                obs_m2 = vec![0.0; f.obs.features.len()];
            }
            if f.obs.features.len() != obs_mean.len() {
                return Err(Error::Shape(format!(
                    "episode {} frame {} has {} features, expected {}",
                    ep.episode_id,
                    f.t,
                    f.obs.features.len(),
                    obs_mean.len()
                )));
            }
            for (d, v) in f.obs.features.iter().enumerate() {
                let delta = v - obs_mean[d];
                obs_mean[d] += delta / n as f64;
                obs_m2[d] += delta * (v - obs_mean[d]);
            }
        }
    }
    if episodes == 0 || n == 0 {
        return Err(Error::Empty(
            "no training actions for normalization statistics",
        ));
    }
    let std = std::array::from_fn(|d| (m2[d] / n as f64).sqrt().max(STD_FLOOR));
    // Constant features (e.g. the attachment flag in an approach-only set) keep unit scale.
    let obs_std = obs_m2
        .iter()
        .map(|m| {
            let s = (m / n as f64).sqrt();
            if s < STD_FLOOR {
                1.0
            } else {
                s
            }
        })
        .collect();
    Ok(NormStats {
        mean,
        std,
        obs_mean,
        obs_std,
    })
}
