//! Training samples: a 4-frame history window plus the next 5 executed
//! actions as the regression target.

use super::episode::EpisodeRecord;
use super::stats::NormStats;
use crate::error::{Error, Result};
use crate::magsim::{build_workspace, Observation, PhaseLabel, TaskId, WorkspaceSpec};
use crate::{CHUNK_LEN, HISTORY_LEN};

/// `K x 4` chunk of dual-arm deltas.
pub type ChunkRows = [[f64; 4]; CHUNK_LEN];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// Standardized observations, oldest first; the last entry is the
    /// observation at `t`.
    pub obs_history: Vec<Observation>,
    /// Arm states over the same window, normalized by workspace scale.
    pub state_history: [[f64; 4]; HISTORY_LEN],
    /// Normalized arm state at `t`.
    pub state: [f64; 4],
    pub prompt_id: usize,
    pub task_id: TaskId,
    /// Normalized executed actions at `t .. t + K - 1`.
    pub chunk: ChunkRows,
    pub phase: PhaseLabel,
}

/// Inclusive range of valid sample times, or `None` for too-short episodes.
pub fn valid_range(len: usize) -> Option<(usize, usize)> {
    let lo = HISTORY_LEN - 1;
    let hi = len.checked_sub(CHUNK_LEN)?;
    (lo <= hi).then_some((lo, hi))
}

pub fn samples_per_episode(len: usize) -> usize {
    valid_range(len).map_or(0, |(lo, hi)| hi - lo + 1)
}

pub fn make_sample(episode: &EpisodeRecord, t: usize, stats: &NormStats) -> Result<TrainingSample> {
    let ws = build_workspace(episode.task_id);
    make_sample_in(episode, t, stats, &ws)
}

pub fn make_sample_in(
    episode: &EpisodeRecord,
    t: usize,
    stats: &NormStats,
    ws: &WorkspaceSpec,
) -> Result<TrainingSample> {
    let (lo, hi) = valid_range(episode.len()).ok_or_else(|| {
        Error::Dataset(format!(
            "episode {} too short ({} frames) for any sample",
            episode.episode_id,
            episode.len()
        ))
    })?;
    if t < lo || t > hi {
        return Err(Error::OutOfRange { index: t, lo, hi });
    }
    let window = &episode.frames[t + 1 - HISTORY_LEN..=t];
    let obs_history = window
        .iter()
        .map(|f| stats.normalize_observation(&f.obs))
        .collect::<Result<_>>()?;
    let state_history = std::array::from_fn(|i| ws.normalize_arms(&window[i].state));
    let chunk = std::array::from_fn(|k| stats.normalize(&episode.frames[t + k].action));
    Ok(TrainingSample {
        obs_history,
        state_history,
        state: state_history[HISTORY_LEN - 1],
        prompt_id: episode.prompt_id,
        task_id: episode.task_id,
        chunk,
        phase: episode.frames[t].phase,
    })
}

/// Every valid sample of the given episodes, in episode then time order.
pub fn all_samples<'a, I>(episodes: I, stats: &NormStats) -> Result<Vec<TrainingSample>>
where
    I: IntoIterator<Item = &'a EpisodeRecord>,
{
    let mut out = Vec::new();
    for ep in episodes {
        let ws = build_workspace(ep.task_id);
        if let Some((lo, hi)) = valid_range(ep.len()) {
            for t in lo..=hi {
                out.push(make_sample_in(ep, t, stats, &ws)?);
            }
        }
    }
    Ok(out)
}
