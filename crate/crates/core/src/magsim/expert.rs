//! Scripted demonstrator.
//!
//! The bead is steered by placing both magnets ahead of it along the desired
//! direction of motion, straddling that direction symmetrically. For a pair
//! at lookahead `l` and lateral offset `k * l` the bead speed is
//!
//! ```text
//! v = mu * dt * 2c / (l^q * (1 + k^2)^((q + 1) / 2))
//! ```
//!
//! and the pair is laterally restoring as long as `k < 1/sqrt(2)`, so the
//! expert solves for `l` from the desired speed and keeps `k` fixed.

use super::geometry::{Vec2, WorkspaceSpec};
use super::sim::{clip_action, ArmVec, SimConfig, SimState};
use super::PhaseLabel;

/// Tuning of the scripted controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertConfig {
    /// Pure-pursuit lookahead along the centerline, ticks.
    pub pursuit: f64,
    /// Lateral half-spacing of the magnet pair relative to its lookahead.
    pub spread: f64,
    pub approach_speed: f64,
    pub transport_speed: f64,
    pub min_speed: f64,
    /// Speed per tick of remaining distance when closing in on a target.
    pub gain: f64,
    pub min_lookahead: f64,
    pub max_lookahead: f64,
    /// Fraction of the remaining arm-to-target offset covered per step.
    pub tracking: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            pursuit: 60.0,
            spread: 0.5,
            approach_speed: 10.0,
            transport_speed: 8.0,
            min_speed: 2.0,
            gain: 0.25,
            min_lookahead: 80.0,
            max_lookahead: 260.0,
            tracking: 0.5,
        }
    }
}

/// Where the expert wants the magnets for a desired bead velocity.
pub fn arm_targets(
    bead: Vec2,
    dir: Vec2,
    speed: f64,
    cfg: &SimConfig,
    ex: &ExpertConfig,
) -> (Vec2, Vec2) {
    let q = cfg.force_exponent;
    let shape = (1.0 + ex.spread * ex.spread).powf(0.5 * (q + 1.0));
    let lookahead = (2.0 * cfg.coupling * cfg.mobility * cfg.dt / (speed.max(1e-6) * shape))
        .powf(1.0 / q)
        .clamp(ex.min_lookahead, ex.max_lookahead);
    let center = bead + dir * lookahead;
    let side = dir.perp() * (ex.spread * lookahead);
    (center + side, center - side)
}

/// Direction and speed the expert wants for the bead.
fn desired_motion(state: &SimState, ws: &WorkspaceSpec, ex: &ExpertConfig) -> (Vec2, f64) {
    let line = &ws.corridor.centerline;
    if state.attached {
        // Steer the cargo: pursue the centerline ahead of it, then the goal.
        let goal = ws.goal_region.center;
        let arc = line.project(state.cargo).arc;
        let remaining = line.length() - arc;
        let aim = if remaining > ex.pursuit {
            line.point_at(arc + ex.pursuit)
        } else {
            goal
        };
        let dir = (aim - state.cargo)
            .normalized()
            .unwrap_or_else(|| line.tangent_at(arc));
        let speed = (state.cargo.dist(goal) * ex.gain).clamp(ex.min_speed, ex.transport_speed);
        (dir, speed)
    } else {
        let bead_arc = line.project(state.bead).arc;
        let cargo_arc = line.project(state.cargo).arc;
        let aim = if cargo_arc - bead_arc > ex.pursuit {
            line.point_at(bead_arc + ex.pursuit)
        } else {
            state.cargo
        };
        let dir = (aim - state.bead)
            .normalized()
            .unwrap_or_else(|| line.tangent_at(bead_arc));
        let speed = (state.bead.dist(state.cargo) * ex.gain).clamp(ex.min_speed, ex.approach_speed);
        (dir, speed)
    }
}

/// Scripted action and phase label for `state`.
///
/// Phase is `Approach` until the cargo is attached and `Transport` while it
/// is; a slip sends the expert back to approach.
pub fn expert_action(
    state: &SimState,
    ws: &WorkspaceSpec,
    cfg: &SimConfig,
) -> (ArmVec, PhaseLabel) {
    expert_action_with(state, ws, cfg, &ExpertConfig::default())
}

pub fn expert_action_with(
    state: &SimState,
    ws: &WorkspaceSpec,
    cfg: &SimConfig,
    ex: &ExpertConfig,
) -> (ArmVec, PhaseLabel) {
    let phase = if state.attached {
        PhaseLabel::Transport
    } else {
        PhaseLabel::Approach
    };
    let (dir, speed) = desired_motion(state, ws, ex);
    let (l, r) = arm_targets(state.bead, dir, speed, cfg, ex);
    let l = ws.bounds.clamp(l);
    let r = ws.bounds.clamp(r);
    let k = ex.tracking;
    let raw = [
        k * (l.x - state.arms[0]),
        k * (l.y - state.arms[1]),
        k * (r.x - state.arms[2]),
        k * (r.y - state.arms[3]),
    ];
    (clip_action(&raw, cfg.max_arm_delta), phase)
}
