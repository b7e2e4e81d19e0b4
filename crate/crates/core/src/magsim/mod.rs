//! Deterministic 2D overdamped simulator of a magnetic bead pushed by two
//! magnet-bearing arms through corridor-shaped phantoms.

pub mod expert;
pub mod geometry;
pub mod observe;
pub mod sim;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use expert::{expert_action, ExpertConfig};
pub use geometry::{build_workspace, export_workspaces, TaskId, Vec2, WorkspaceSpec};
pub use observe::{observe, Observation, FEATURE_DIM, RELATIVE_SCALE};
pub use sim::{magnetic_force, step_sim, ArmVec, SimConfig, SimState, Simulator, StepEvents};

/// Manipulation stage. Serialized as its integer class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum PhaseLabel {
    Approach = 0,
    Transport = 1,
}

impl PhaseLabel {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl TryFrom<i64> for PhaseLabel {
    type Error = Error;

    fn try_from(v: i64) -> Result<Self, Error> {
        match v {
            0 => Ok(PhaseLabel::Approach),
            1 => Ok(PhaseLabel::Transport),
            other => Err(Error::InvalidPhase(other)),
        }
    }
}

impl From<PhaseLabel> for i64 {
    fn from(p: PhaseLabel) -> i64 {
        p as i64
    }
}

/// The two measured stages of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Success {
    pub approach_done: bool,
    pub transport_done: bool,
}

/// Approach is latched once the cargo was ever captured; transport holds
/// while the cargo sits inside the goal disc.
pub fn check_success(state: &SimState, ws: &WorkspaceSpec) -> Success {
    Success {
        approach_done: state.ever_attached,
        transport_done: ws.goal_region.contains(state.cargo),
    }
}
