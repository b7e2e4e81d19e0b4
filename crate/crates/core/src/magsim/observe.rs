//! Observation model: a compact feature vector plus an optional coarse
//! occupancy image. The goal is never observed; task identity reaches the
//! policy only through the prompt.

use serde::{Deserialize, Serialize};

use super::geometry::{Vec2, WorkspaceSpec};
use super::sim::SimState;

/// `[bead(2), cargo(2), left arm(2), right arm(2), attached, bead clearances(2), cargo clearances(2),
/// left - bead(2), right - bead(2), cargo - bead(2)]`
pub const FEATURE_DIM: usize = 19;
/// Ticks per unit for the bead-relative features.
pub const RELATIVE_SCALE: f64 = 50.0;
pub const GRID_SIZE: usize = 32;
pub const GRID_CHANNELS: usize = 4;
pub const GRID_LEN: usize = GRID_CHANNELS * GRID_SIZE * GRID_SIZE;

/// Grid channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Walls = 0,
    Bead = 1,
    Cargo = 2,
    Arms = 3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: Vec<f64>,
    /// Channel-major `[channel][row][col]` intensities in `[0, 1]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
}

impl Observation {
    pub fn grid_at(&self, ch: Channel, row: usize, col: usize) -> Option<f64> {
        self.grid
            .as_ref()
            .map(|g| g[(ch as usize) * GRID_SIZE * GRID_SIZE + row * GRID_SIZE + col])
    }
}

/// Grid cell `(row, col)` containing `p`, clamped to the image.
pub fn cell_of(p: Vec2, ws: &WorkspaceSpec) -> (usize, usize) {
    let cw = ws.bounds.width / GRID_SIZE as f64;
    let ch = ws.bounds.height / GRID_SIZE as f64;
    let col = ((p.x / cw).floor().max(0.0) as usize).min(GRID_SIZE - 1);
    let row = ((p.y / ch).floor().max(0.0) as usize).min(GRID_SIZE - 1);
    (row, col)
}

pub fn features(state: &SimState, ws: &WorkspaceSpec) -> Vec<f64> {
    let scale = ws.scale();
    let mut f = Vec::with_capacity(FEATURE_DIM);
    for p in [state.bead, state.cargo, state.left(), state.right()] {
        let n = ws.normalize_point(p);
        f.push(n.x);
        f.push(n.y);
    }
    f.push(if state.attached { 1.0 } else { 0.0 });
    for p in [state.bead, state.cargo] {
        let (a, b) = ws.corridor.clearances(p);
        f.push(a / scale);
        f.push(b / scale);
    }
    // Finer scale so offsets of a few ticks register.
    for p in [state.left(), state.right(), state.cargo] {
        let r = (p - state.bead) * (1.0 / RELATIVE_SCALE);
        f.push(r.x);
        f.push(r.y);
    }
    debug_assert_eq!(f.len(), FEATURE_DIM);
    f
}

pub fn render_grid(state: &SimState, ws: &WorkspaceSpec) -> Vec<f64> {
    let mut g = vec![0.0; GRID_LEN];
    let plane = GRID_SIZE * GRID_SIZE;
    let cw = ws.bounds.width / GRID_SIZE as f64;
    let chh = ws.bounds.height / GRID_SIZE as f64;
    for row in 0..GRID_SIZE {
        for col in 0..GRID_SIZE {
            let c = Vec2::new((col as f64 + 0.5) * cw, (row as f64 + 0.5) * chh);
            if ws.corridor.centerline.project(c).distance > ws.corridor.half_width {
                g[Channel::Walls as usize * plane + row * GRID_SIZE + col] = 1.0;
            }
        }
    }
    let mut mark = |ch: Channel, p: Vec2| {
        let (r, c) = cell_of(p, ws);
        g[ch as usize * plane + r * GRID_SIZE + c] = 1.0;
    };
    mark(Channel::Bead, state.bead);
    mark(Channel::Cargo, state.cargo);
    mark(Channel::Arms, state.left());
    mark(Channel::Arms, state.right());
    g
}

/// Deterministic observation of `state`.
pub fn observe(state: &SimState, ws: &WorkspaceSpec, with_grid: bool) -> Observation {
    Observation {
        features: features(state, ws),
        grid: with_grid.then(|| render_grid(state, ws)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::magsim::geometry::{build_workspace, TaskId};

    #[test]
    fn goal_is_not_observed() {
        let a = build_workspace(TaskId::A);
        let mut b = a.clone();
        b.goal_region.center = Vec2::new(100.0, 100.0);
        b.goal_region.radius = 5.0;
        b.task_id = TaskId::C;
        let s = SimState::nominal(&a);
        assert_eq!(observe(&s, &a, true), observe(&s, &b, true));
    }

    #[test]
    fn centered_bead_has_equal_clearances() {
        let ws = build_workspace(TaskId::B);
        let mut s = SimState::nominal(&ws);
        s.bead = ws.corridor.centerline.point_at(123.0);
        let f = features(&s, &ws);
        assert!((f[9] - f[10]).abs() < 1e-12);
        assert!((f[9] * ws.scale() - ws.corridor.half_width).abs() < 1e-9);
    }

    #[test]
    fn bead_channel_is_one_hot() {
        let ws = build_workspace(TaskId::C);
        let mut s = SimState::nominal(&ws);
        for (x, y) in [(0.0, 0.0), (639.9, 480.1), (1279.99, 959.99), (41.0, 29.0)] {
            s.bead = Vec2::new(x, y);
            let obs = observe(&s, &ws, true);
            // Direct arithmetic: cells are 40 x 30 ticks.
            let er = (y / 30.0) as usize;
            let ec = (x / 40.0) as usize;
            for r in 0..GRID_SIZE {
                for c in 0..GRID_SIZE {
                    let v = obs.grid_at(Channel::Bead, r, c).unwrap();
                    let expected = if (r, c) == (er, ec) { 1.0 } else { 0.0 };
                    assert_eq!(v, expected, "cell ({r},{c}) for bead ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn fixed_feature_length_and_range() {
        let ws = build_workspace(TaskId::A);
        let s = SimState::nominal(&ws);
        let o = observe(&s, &ws, true);
        assert_eq!(o.features.len(), FEATURE_DIM);
        let g = o.grid.unwrap();
        assert_eq!(g.len(), GRID_LEN);
        assert!(g.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
