//! Episode records and the on-disk dataset layout:
//!
//! ```text
//! <dir>/meta.json
//! <dir>/stats.json
//! <dir>/episodes/ep_0000.jsonl   one frame object per line
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stats::{compute_norm_stats, NormStats};
use crate::error::{Error, Result};
use crate::magsim::{ArmVec, Observation, PhaseLabel, SimConfig, TaskId};
use crate::{CHUNK_LEN, HISTORY_LEN};

pub const FORMAT_VERSION: u32 = 1;
pub const FPS: u32 = 10;

/// One control step: what was seen, where the arms were, what was executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: usize,
    pub obs: Observation,
    /// Arm positions `[xL, yL, xR, yR]` in ticks before the action.
    pub state: ArmVec,
    /// Delta executed at this step, ticks.
    pub action: ArmVec,
    pub phase: PhaseLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode_id: usize,
    pub task_id: TaskId,
    pub prompt_id: usize,
    pub frames: Vec<Frame>,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks the structural invariants every stored episode must satisfy.
    pub fn validate(&self) -> Result<()> {
        let min = CHUNK_LEN + HISTORY_LEN;
        if self.frames.len() < min {
            return Err(Error::Dataset(format!(
                "episode {} has {} frames, need at least {min}",
                self.episode_id,
                self.frames.len()
            )));
        }
        if super::prompts::task_of_prompt(self.prompt_id) != Some(self.task_id) {
            return Err(Error::Dataset(format!(
                "episode {}: prompt {} does not describe task {}",
                self.episode_id, self.prompt_id, self.task_id
            )));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.t != i {
                return Err(Error::Dataset(format!(
                    "episode {}: frame {i} carries t={}",
                    self.episode_id, f.t
                )));
            }
            if !f.action.iter().chain(f.state.iter()).all(|v| v.is_finite()) {
                return Err(Error::Dataset(format!(
                    "episode {}: non-finite value at frame {i}",
                    self.episode_id
                )));
            }
        }
        Ok(())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for f in &self.frames {
            serde_json::to_writer(&mut w, f)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path, info: &EpisodeInfo) -> Result<EpisodeRecord> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut frames = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            frames.push(serde_json::from_str(&line)?);
        }
        Ok(EpisodeRecord {
            episode_id: info.episode_id,
            task_id: info.task_id,
            prompt_id: info.prompt_id,
            frames,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Per-episode entry of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeInfo {
    pub episode_id: usize,
    pub task_id: TaskId,
    pub prompt_id: usize,
    pub n_frames: usize,
    pub split: Split,
    /// Simulator seed the episode was produced with; absent for recordings.
    #[serde(default)]
    pub seed: Option<u64>,
    /// `"expert"` or `"teleop"`.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub fps: u32,
    pub seed: u64,
    pub n_episodes: usize,
    pub total_frames: usize,
    /// Expert failures that were discarded and regenerated.
    pub regenerated: usize,
    pub chunk_len: usize,
    pub history_len: usize,
    pub with_grid: bool,
    pub sim_config: SimConfig,
    pub episodes: Vec<EpisodeInfo>,
}

impl DatasetMeta {
    pub fn split_ids(&self, split: Split) -> Vec<usize> {
        self.episodes
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.episode_id)
            .collect()
    }

    pub fn split_counts(&self) -> (usize, usize, usize) {
        let c = |s| self.episodes.iter().filter(|e| e.split == s).count();
        (c(Split::Train), c(Split::Val), c(Split::Test))
    }
}

pub fn episode_file_name(episode_id: usize) -> String {
    format!("ep_{episode_id:04}.jsonl")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// A dataset fully loaded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub stats: NormStats,
    /// Indexed by position in `meta.episodes`.
    pub episodes: Vec<EpisodeRecord>,
}

impl Dataset {
    pub fn episodes_in(&self, split: Split) -> Vec<&EpisodeRecord> {
        self.meta
            .episodes
            .iter()
            .zip(&self.episodes)
            .filter(|(info, _)| info.split == split)
            .map(|(_, ep)| ep)
            .collect()
    }

    /// The given episodes as a training-only dataset with fresh statistics.
    pub fn train_subset(&self, ids: &[usize]) -> Result<Dataset> {
        let mut infos = Vec::with_capacity(ids.len());
        let mut episodes = Vec::with_capacity(ids.len());
        for &id in ids {
            let pos = self
                .meta
                .episodes
                .iter()
                .position(|e| e.episode_id == id)
                .ok_or_else(|| Error::Dataset(format!("no episode {id}")))?;
            infos.push(EpisodeInfo {
                split: Split::Train,
                ..self.meta.episodes[pos].clone()
            });
            episodes.push(self.episodes[pos].clone());
        }
        let stats = compute_norm_stats(&episodes)?;
        let meta = DatasetMeta {
            n_episodes: episodes.len(),
            total_frames: episodes.iter().map(|e| e.len()).sum(),
            episodes: infos,
            ..self.meta.clone()
        };
        Ok(Dataset {
            meta,
            stats,
            episodes,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let ep_dir = dir.join("episodes");
        fs::create_dir_all(&ep_dir).map_err(|e| Error::io(&ep_dir, e))?;
        for ep in &self.episodes {
            ep.write_jsonl(&ep_dir.join(episode_file_name(ep.episode_id)))?;
        }
        write_json(&dir.join("meta.json"), &self.meta)?;
        write_json(&dir.join("stats.json"), &self.stats)
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let meta: DatasetMeta = read_json(&dir.join("meta.json"))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Dataset(format!(
                "unsupported format_version {}",
                meta.format_version
            )));
        }
        let stats: NormStats = read_json(&dir.join("stats.json"))?;
        let mut episodes = Vec::with_capacity(meta.episodes.len());
        for info in &meta.episodes {
            let path = dir
                .join("episodes")
                .join(episode_file_name(info.episode_id));
            let ep = EpisodeRecord::read_jsonl(&path, info)?;
            if ep.len() != info.n_frames {
                return Err(Error::Dataset(format!(
                    "episode {} has {} frames, meta says {}",
                    info.episode_id,
                    ep.len(),
                    info.n_frames
                )));
            }
            episodes.push(ep);
        }
        let recount: usize = episodes.iter().map(|e| e.len()).sum();
        if recount != meta.total_frames {
            return Err(Error::Dataset(format!(
                "frame recount {recount} disagrees with meta total {}",
                meta.total_frames
            )));
        }
        Ok(Dataset {
            meta,
            stats,
            episodes,
        })
    }

    /// Adds an externally recorded episode to an existing dataset directory,
    /// assigning it the next free id. Action statistics are recomputed over
    /// the training split.
    pub fn append_recorded(dir: &Path, mut episode: EpisodeRecord, split: Split) -> Result<usize> {
        let meta_path = dir.join("meta.json");
        let mut meta: DatasetMeta = read_json(&meta_path)?;
        let id = meta
            .episodes
            .iter()
            .map(|e| e.episode_id + 1)
            .max()
            .unwrap_or(0);
        episode.episode_id = id;
        episode.validate()?;
        let ep_dir = dir.join("episodes");
        fs::create_dir_all(&ep_dir).map_err(|e| Error::io(&ep_dir, e))?;
        episode.write_jsonl(&ep_dir.join(episode_file_name(id)))?;
        meta.episodes.push(EpisodeInfo {
            episode_id: id,
            task_id: episode.task_id,
            prompt_id: episode.prompt_id,
            n_frames: episode.len(),
            split,
            seed: None,
            source: "teleop".into(),
        });
        meta.n_episodes = meta.episodes.len();
        meta.total_frames += episode.len();
        write_json(&meta_path, &meta)?;
        let ds = Dataset::load(dir)?;
        let train = ds.episodes_in(Split::Train);
        if !train.is_empty() {
            write_json(&dir.join("stats.json"), &compute_norm_stats(train)?)?;
        }
        Ok(id)
    }
}

/// Creates an empty dataset directory that recordings can be appended to.
pub fn init_empty(dir: &Path, sim_config: SimConfig, stats: NormStats) -> Result<PathBuf> {
    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        fps: FPS,
        seed: sim_config.rng_seed,
        n_episodes: 0,
        total_frames: 0,
        regenerated: 0,
        chunk_len: CHUNK_LEN,
        history_len: HISTORY_LEN,
        with_grid: false,
        sim_config,
        episodes: Vec::new(),
    };
    let ds = Dataset {
        meta,
        stats,
        episodes: Vec::new(),
    };
    ds.save(dir)?;
    Ok(dir.to_path_buf())
}
