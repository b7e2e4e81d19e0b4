use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::Policy;
use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::nn::NamedArray;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized policy: configuration, action statistics and all parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub stats: NormStats,
    /// Optimizer step at which the weights were taken.
    pub step: usize,
    pub params: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn from_policy(policy: &Policy, stats: &NormStats, step: usize) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: policy.config().clone(),
            stats: stats.clone(),
            step,
            params: policy.params().to_named(),
        }
    }

    /// Rebuilds the policy. When `expected` is given the stored config must match it.
    pub fn into_policy(self, expected: Option<&ModelConfig>) -> Result<(Policy, NormStats)> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        if let Some(want) = expected {
            if *want != self.config {
                return Err(Error::Checkpoint(format!(
                    "config mismatch: checkpoint has {:?}, expected {:?}",
                    self.config, want
                )));
            }
        }
        self.stats.validate()?;
        let mut policy = Policy::new(self.config)?;
        policy
            .params_mut()
            .load_named(&self.params)
            .map_err(Error::Checkpoint)?;
        Ok((policy, self.stats))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn save_policy(path: &Path, policy: &Policy, stats: &NormStats, step: usize) -> Result<()> {
    Checkpoint::from_policy(policy, stats, step).save(path)
}

pub fn load_policy(path: &Path, expected: Option<&ModelConfig>) -> Result<(Policy, NormStats)> {
    Checkpoint::load(path)?.into_policy(expected)
}
