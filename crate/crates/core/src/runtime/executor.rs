use std::io::Write;

use serde::{Deserialize, Serialize};

use super::buffer::{ChunkBuffer, ChunkEntry, DEFAULT_LAMBDA};
use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::magsim::{
    check_success, observe, ArmVec, Observation, PhaseLabel, SimState, Simulator, Success, Vec2,
};
use crate::policy::Policy;
use crate::HISTORY_LEN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub max_steps: usize,
    /// Issue a new chunk every this many steps.
    pub replan_every: usize,
    /// Drop all buffered chunks before each new one (open-loop chunk playback).
    pub clear_on_replan: bool,
    /// Condition the decoder on the attachment-derived phase instead of the prediction.
    pub teacher_phase: bool,
    pub lambda: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            max_steps: 400,
            replan_every: 1,
            clear_on_replan: false,
            teacher_phase: false,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

/// World state as logged per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub arms: ArmVec,
    pub bead: Vec2,
    pub cargo: Vec2,
    pub attached: bool,
}

impl From<&SimState> for StateSnapshot {
    fn from(s: &SimState) -> Self {
        StateSnapshot {
            arms: s.arms,
            bead: s.bead,
            cargo: s.cargo,
            attached: s.attached,
        }
    }
}

/// One line of the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// State before the action.
    pub state: StateSnapshot,
    pub phase_logits: [f64; 2],
    pub predicted_phase: PhaseLabel,
    /// Chunk issued at this step, in ticks.
    pub pushed: Option<ChunkEntry>,
    /// Executed (ensembled) action in ticks.
    pub action: ArmVec,
    pub weight_mass: f64,
    pub n_active: usize,
    /// No chunk covered this step; the arms held still.
    pub held: bool,
    pub saturated: bool,
    pub slipped: bool,
    /// Success flags after the action.
    pub success: Success,
}

/// Receding-horizon controller state for one episode.
#[derive(Debug, Clone)]
pub struct Executor {
    pub sim: Simulator,
    pub stats: NormStats,
    pub prompt_id: usize,
    pub cfg: RolloutConfig,
    buffer: ChunkBuffer,
    obs: Vec<Observation>,
    states: Vec<[f64; 4]>,
    t: usize,
    success: Success,
}

impl Executor {
    pub fn new(
        sim: Simulator,
        stats: NormStats,
        prompt_id: usize,
        cfg: RolloutConfig,
    ) -> Result<Self> {
        if cfg.replan_every == 0 {
            return Err(Error::InvalidConfig("replan_every must be positive".into()));
        }
        stats.validate()?;
        let success = check_success(&sim.state, &sim.ws);
        Ok(Executor {
            buffer: ChunkBuffer::new(cfg.lambda),
            sim,
            stats,
            prompt_id,
            cfg,
            obs: Vec::new(),
            states: Vec::new(),
            t: 0,
            success,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn success(&self) -> Success {
        self.success
    }

    pub fn buffer(&self) -> &ChunkBuffer {
        &self.buffer
    }

    pub fn done(&self) -> bool {
        self.success.transport_done || self.t >= self.cfg.max_steps
    }

    /// Last `HISTORY_LEN` entries, padding the start by repeating the first.
    fn window<T: Clone>(items: &[T]) -> Vec<T> {
        let n = items.len();
        (0..HISTORY_LEN)
            .map(|i| {
                let back = HISTORY_LEN - 1 - i;
                items[n.saturating_sub(1 + back)].clone()
            })
            .collect()
    }

    /// observe, predict, push, prune, ensemble, act.
    pub fn step(&mut self, policy: &Policy) -> Result<StepRecord> {
        let ws = &self.sim.ws;
        let before = self.sim.state.clone();
        let obs = observe(&before, ws, policy.config().use_grid);
        self.obs.push(self.stats.normalize_observation(&obs)?);
        self.states.push(ws.normalize_arms(&before.arms));
        if self.obs.len() > HISTORY_LEN {
            self.obs.remove(0);
            self.states.remove(0);
        }
        let obs_history = Self::window(&self.obs);
        let state_window = Self::window(&self.states);
        let state_history: [[f64; 4]; HISTORY_LEN] = std::array::from_fn(|i| state_window[i]);
        let t = self.t as i64;

        let replan = self.t % self.cfg.replan_every == 0;
        let teacher = self.cfg.teacher_phase.then(|| {
            if before.attached {
                PhaseLabel::Transport
            } else {
                PhaseLabel::Approach
            }
        });
        let pred = policy.forward(
            crate::policy::PolicyInput {
                obs_history: &obs_history,
                state_history: &state_history,
                prompt_id: self.prompt_id,
            },
            teacher,
        )?;
        let mut pushed = None;
        if replan {
            let rows = pred.chunk.values.map(|r| self.stats.denormalize(&r));
            if self.cfg.clear_on_replan {
                self.buffer.clear();
            }
            self.buffer.push_chunk(t, rows)?;
            pushed = Some(ChunkEntry {
                t_r: t,
                chunk: rows,
            });
        }
        self.buffer.prune(t);
        let (action, weight_mass, n_active, held) = match self.buffer.ensemble_action(t) {
            Ok(e) => (e.action, e.weight_mass, e.n_active, false),
            Err(Error::NoAction(_)) => ([0.0; 4], 0.0, 0, true),
            Err(e) => return Err(e),
        };
        let ev = self.sim.step(&action)?;
        self.success = check_success(&self.sim.state, &self.sim.ws);
        self.t += 1;
        Ok(StepRecord {
            t: self.t - 1,
            state: StateSnapshot::from(&before),
            phase_logits: pred.phase.logits,
            predicted_phase: pred.phase.predicted,
            pushed,
            action,
            weight_mass,
            n_active,
            held,
            saturated: ev.saturated,
            slipped: ev.slipped,
            success: self.success,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub steps: Vec<StepRecord>,
    pub success: Success,
    pub final_state: SimState,
}

/// Runs until the cargo reaches the goal or `max_steps` elapse. With a
/// writer, each step is appended as one JSON line.
pub fn run_rollout(
    policy: &Policy,
    stats: &NormStats,
    sim: Simulator,
    prompt_id: usize,
    cfg: &RolloutConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<Rollout> {
    let mut ex = Executor::new(sim, stats.clone(), prompt_id, cfg.clone())?;
    let mut steps = Vec::new();
    while !ex.done() {
        let rec = ex.step(policy)?;
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&rec)?;
            writeln!(w, "{line}").map_err(|e| Error::io("<trajectory log>", e))?;
        }
        steps.push(rec);
    }
    Ok(Rollout {
        steps,
        success: ex.success(),
        final_state: ex.sim.state,
    })
}

/// Reads a trajectory log written by [`run_rollout`].
pub fn read_trajectory(text: &str) -> Result<Vec<StepRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
