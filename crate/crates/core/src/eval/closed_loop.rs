use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::generate::derive_seed;
use crate::dataset::{build_prompt_bank, NormStats};
use crate::error::{Error, Result};
use crate::magsim::{
    build_workspace, check_success, expert_action, SimConfig, Simulator, Success, TaskId,
};
use crate::policy::Policy;
use crate::runtime::{run_rollout, RolloutConfig};

/// What drives the arms during a trial.
#[derive(Debug, Clone, Copy)]
pub enum Agent<'a> {
    Policy {
        policy: &'a Policy,
        stats: &'a NormStats,
        rollout: &'a RolloutConfig,
    },
    Expert,
    /// Commands zero deltas every step.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub trial: usize,
    pub sim_seed: u64,
    pub prompt_id: usize,
    pub steps: usize,
    pub approach: bool,
    pub transport: bool,
    pub crashed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSuccess {
    pub task: TaskId,
    pub n_trials: usize,
    pub approach_success: f64,
    pub transport_success: f64,
    pub n_crashed: usize,
    pub trials: Vec<TrialLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessTable {
    pub seed: u64,
    pub max_steps: usize,
    pub rows: Vec<TaskSuccess>,
}

impl SuccessTable {
    pub fn row(&self, task: TaskId) -> Option<&TaskSuccess> {
        self.rows.iter().find(|r| r.task == task)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopConfig {
    pub n_trials: usize,
    pub seed: u64,
    pub max_steps: usize,
    pub sim: SimConfig,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        ClosedLoopConfig {
            n_trials: 20,
            seed: 0,
            max_steps: 400,
            sim: SimConfig::default(),
        }
    }
}

fn run_trial(
    agent: Agent<'_>,
    sim: Simulator,
    prompt_id: usize,
    max_steps: usize,
) -> Result<(Success, usize)> {
    match agent {
        Agent::Policy {
            policy,
            stats,
            rollout,
        } => {
            let cfg = RolloutConfig {
                max_steps,
                ..rollout.clone()
            };
            let r = run_rollout(policy, stats, sim, prompt_id, &cfg, None)?;
            Ok((r.success, r.steps.len()))
        }
        Agent::Expert | Agent::Zero => {
            let mut sim = sim;
            let mut success = check_success(&sim.state, &sim.ws);
            let mut t = 0;
            while t < max_steps && !success.transport_done {
                let action = match agent {
                    Agent::Expert => expert_action(&sim.state, &sim.ws, &sim.cfg).0,
                    _ => [0.0; 4],
                };
                sim.step(&action)?;
                success = check_success(&sim.state, &sim.ws);
                t += 1;
            }
            Ok((success, t))
        }
    }
}

/// Seeded trials per task from randomized starts. A trial that errors counts
/// as failed for both stages and is flagged.
pub fn closed_loop_eval(
    agent: Agent<'_>,
    tasks: &[TaskId],
    cfg: &ClosedLoopConfig,
) -> Result<SuccessTable> {
    if cfg.n_trials < 10 {
        return Err(Error::InvalidConfig(format!(
            "need at least 10 trials, got {}",
            cfg.n_trials
        )));
    }
    let bank = build_prompt_bank();
    let mut rows = Vec::with_capacity(tasks.len());
    for &task in tasks {
        let ws = build_workspace(task);
        let prompts = bank.prompts_for(task);
        let mut trials = Vec::with_capacity(cfg.n_trials);
        for trial in 0..cfg.n_trials {
            let stream = (task.index() as u64) << 32 | trial as u64;
            let trial_seed = derive_seed(cfg.seed, stream);
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
            let prompt_id = prompts[rng.gen_range(0..prompts.len())];
            let sim_seed = rng.gen::<u64>();
            let sim_cfg = SimConfig {
                rng_seed: sim_seed,
                ..cfg.sim.clone()
            };
            let outcome = Simulator::new(ws.clone(), sim_cfg)
                .and_then(|sim| run_trial(agent, sim, prompt_id, cfg.max_steps));
            let log = match outcome {
                Ok((s, steps)) => TrialLog {
                    trial,
                    sim_seed,
                    prompt_id,
                    steps,
                    approach: s.approach_done,
                    transport: s.transport_done,
                    crashed: false,
                    error: None,
                },
                Err(e) => {
                    tracing::warn!(%task, trial, error = %e, "trial crashed");
                    TrialLog {
                        trial,
                        sim_seed,
                        prompt_id,
                        steps: 0,
                        approach: false,
                        transport: false,
                        crashed: true,
                        error: Some(e.to_string()),
                    }
                }
            };
            trials.push(log);
        }
        let n = trials.len() as f64;
        rows.push(TaskSuccess {
            task,
            n_trials: trials.len(),
            approach_success: trials.iter().filter(|t| t.approach).count() as f64 / n,
            transport_success: trials.iter().filter(|t| t.transport).count() as f64 / n,
            n_crashed: trials.iter().filter(|t| t.crashed).count(),
            trials,
        });
    }
    Ok(SuccessTable {
        seed: cfg.seed,
        max_steps: cfg.max_steps,
        rows,
    })
}
