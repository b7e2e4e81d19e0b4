//! Planar geometry: a small 2-vector type, the corridor centerline, and the
//! three fixed task workspaces.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Workspace width in ticks (matches the camera frame).
pub const WORKSPACE_WIDTH: f64 = 1280.0;
/// Workspace height in ticks.
pub const WORKSPACE_HEIGHT: f64 = 960.0;

/// Point or displacement in tick coordinates. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle_deg(deg: f64) -> Self {
        let r = deg.to_radians();
        Vec2::new(r.cos(), r.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Unit vector, or `None` for (near) zero length.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        (n > 1e-12).then(|| self * (1.0 / n))
    }

    /// Rotated by +90 degrees.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// The three manipulation tasks, ordered by difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskId {
    A,
    B,
    C,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::A, TaskId::B, TaskId::C];

    pub fn index(self) -> usize {
        match self {
            TaskId::A => 0,
            TaskId::B => 1,
            TaskId::C => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<TaskId> {
        TaskId::ALL.get(i).copied()
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskId::A => "A",
            TaskId::B => "B",
            TaskId::C => "C",
        };
        f.write_str(s)
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(TaskId::A),
            "B" | "b" => Ok(TaskId::B),
            "C" | "c" => Ok(TaskId::C),
            other => Err(Error::InvalidConfig(format!("unknown task '{other}'"))),
        }
    }
}

/// Closest-point query result against a polyline.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub point: Vec2,
    /// Arc length of `point` from the start of the polyline.
    pub arc: f64,
    /// Unit tangent of the segment containing `point`.
    pub tangent: Vec2,
    pub distance: f64,
}

/// Open polyline with at least two vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<Vec2>,
}

impl Polyline {
    pub fn new(points: Vec<Vec2>) -> Self {
        assert!(points.len() >= 2, "polyline needs at least two vertices");
        Polyline { points }
    }

    fn segments(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| a.dist(b)).sum()
    }

    pub fn start(&self) -> Vec2 {
        self.points[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.points.last().expect("non-empty polyline")
    }

    /// Point at arc length `s`, clamped to the polyline extent.
    pub fn point_at(&self, s: f64) -> Vec2 {
        self.sample(s).0
    }

    /// Unit tangent at arc length `s`.
    pub fn tangent_at(&self, s: f64) -> Vec2 {
        self.sample(s).1
    }

    fn sample(&self, s: f64) -> (Vec2, Vec2) {
        let mut remaining = s.max(0.0);
        let mut last = (self.start(), Vec2::new(1.0, 0.0));
        for (a, b) in self.segments() {
            let len = a.dist(b);
            let dir = (b - a).normalized().unwrap_or(Vec2::new(1.0, 0.0));
            if remaining <= len {
                return (a + dir * remaining, dir);
            }
            remaining -= len;
            last = (b, dir);
        }
        last
    }

    pub fn project(&self, p: Vec2) -> Projection {
        let mut best: Option<Projection> = None;
        let mut arc0 = 0.0;
        for (a, b) in self.segments() {
            let ab = b - a;
            let len_sq = ab.norm_sq();
            let len = len_sq.sqrt();
            let u = if len_sq > 0.0 {
                ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = a + ab * u;
            let d = p.dist(q);
            if best.map_or(true, |b| d < b.distance) {
                best = Some(Projection {
                    point: q,
                    arc: arc0 + u * len,
                    tangent: ab.normalized().unwrap_or(Vec2::new(1.0, 0.0)),
                    distance: d,
                });
            }
            arc0 += len;
        }
        best.expect("polyline has at least one segment")
    }

    /// Sum of absolute heading changes at interior vertices, in degrees.
    pub fn cumulative_turn_deg(&self) -> f64 {
        self.points
            .windows(3)
            .map(|w| {
                let d0 = w[1] - w[0];
                let d1 = w[2] - w[1];
                d0.cross(d1).atan2(d0.dot(d1)).abs().to_degrees()
            })
            .sum()
    }
}

/// Corridor: the tube of points within `half_width` of the centerline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub centerline: Polyline,
    pub half_width: f64,
}

impl Corridor {
    /// Signed lateral offset of `p` from the centerline (positive on the
    /// `tangent.perp()` side) together with the projection.
    pub fn lateral(&self, p: Vec2) -> (f64, Projection) {
        let proj = self.centerline.project(p);
        let side = (p - proj.point).dot(proj.tangent.perp());
        let signed = if side < 0.0 {
            -proj.distance
        } else {
            proj.distance
        };
        (signed, proj)
    }

    /// Clearances to the wall on the `+perp` side and on the `-perp` side.
    pub fn clearances(&self, p: Vec2) -> (f64, f64) {
        let (lat, _) = self.lateral(p);
        (self.half_width - lat, self.half_width + lat)
    }

    /// Nearest point of the sub-tube of half-width `limit` to `p`.
    pub fn confine(&self, p: Vec2, limit: f64) -> Vec2 {
        let proj = self.centerline.project(p);
        if proj.distance <= limit {
            return p;
        }
        let dir = (p - proj.point)
            .normalized()
            .unwrap_or_else(|| proj.tangent.perp());
        proj.point + dir * limit
    }
}

/// Goal disc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalRegion {
    pub center: Vec2,
    pub radius: f64,
}

impl GoalRegion {
    pub fn contains(&self, p: Vec2) -> bool {
        p.dist(self.center) <= self.radius
    }
}

/// Axis-aligned workspace bounds `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub width: f64,
    pub height: f64,
}

impl Bounds {
    pub fn contains(&self, p: Vec2) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn clamp(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.height))
    }
}

/// Fixed geometry of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceSpec {
    pub task_id: TaskId,
    pub bounds: Bounds,
    pub corridor: Corridor,
    pub cargo_start: Vec2,
    pub goal_region: GoalRegion,
    pub cumulative_turn_deg: f64,
}

/// Corridor half-width shared by every task.
pub const CORRIDOR_HALF_WIDTH: f64 = 60.0;
/// Arc length of the nominal cargo position from the corridor entrance.
pub const CARGO_ARC: f64 = 200.0;
/// Goal disc radius.
pub const GOAL_RADIUS: f64 = 40.0;

struct Layout {
    start: Vec2,
    heading_deg: f64,
    /// (segment length, heading change applied after the segment)
    legs: &'static [(f64, f64)],
}

const LAYOUT_A: Layout = Layout {
    start: Vec2::new(220.0, 380.0),
    heading_deg: 0.0,
    legs: &[(420.0, 30.0), (440.0, 0.0)],
};

const LAYOUT_B: Layout = Layout {
    start: Vec2::new(220.0, 260.0),
    heading_deg: 0.0,
    legs: &[(380.0, 45.0), (280.0, 45.0), (260.0, 0.0)],
};

const LAYOUT_C: Layout = Layout {
    start: Vec2::new(220.0, 230.0),
    heading_deg: 0.0,
    legs: &[(360.0, 50.0), (260.0, 50.0), (240.0, 50.0), (240.0, 0.0)],
};

fn trace(layout: &Layout) -> Polyline {
    let mut points = vec![layout.start];
    let mut heading = layout.heading_deg;
    let mut at = layout.start;
    for &(len, turn) in layout.legs {
        at += Vec2::from_angle_deg(heading) * len;
        points.push(at);
        heading += turn;
    }
    Polyline::new(points)
}

/// Fixed, seed-independent geometry for `task_id`.
///
/// Difficulty grows from A to C through the total heading change of the
/// corridor (30, 90 and 150 degrees) and its length.
pub fn build_workspace(task_id: TaskId) -> WorkspaceSpec {
    let layout = match task_id {
        TaskId::A => &LAYOUT_A,
        TaskId::B => &LAYOUT_B,
        TaskId::C => &LAYOUT_C,
    };
    let centerline = trace(layout);
    let cumulative_turn_deg = layout.legs.iter().map(|l| l.1.abs()).sum();
    let cargo_start = centerline.point_at(CARGO_ARC);
    let goal_region = GoalRegion {
        center: centerline.end(),
        radius: GOAL_RADIUS,
    };
    WorkspaceSpec {
        task_id,
        bounds: Bounds {
            width: WORKSPACE_WIDTH,
            height: WORKSPACE_HEIGHT,
        },
        corridor: Corridor {
            centerline,
            half_width: CORRIDOR_HALF_WIDTH,
        },
        cargo_start,
        goal_region,
        cumulative_turn_deg,
    }
}

impl WorkspaceSpec {
    /// Isotropic normalization scale (half the workspace width).
    pub fn scale(&self) -> f64 {
        0.5 * self.bounds.width
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(0.5 * self.bounds.width, 0.5 * self.bounds.height)
    }

    /// Maps tick coordinates to roughly `[-1, 1]`, using the same scale on both axes.
    pub fn normalize_point(&self, p: Vec2) -> Vec2 {
        (p - self.center()) * (1.0 / self.scale())
    }

    /// Arm state `[xL, yL, xR, yR]` in normalized workspace units.
    pub fn normalize_arms(&self, arms: &[f64; 4]) -> [f64; 4] {
        let l = self.normalize_point(Vec2::new(arms[0], arms[1]));
        let r = self.normalize_point(Vec2::new(arms[2], arms[3]));
        [l.x, l.y, r.x, r.y]
    }
}

/// Every task's geometry in a versioned JSON document for viewers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkspaceExport {
    pub format_version: u32,
    pub units: String,
    pub workspaces: Vec<WorkspaceSpec>,
}

pub fn export_workspaces() -> WorkspaceExport {
    WorkspaceExport {
        format_version: 1,
        units: "ticks".to_string(),
        workspaces: TaskId::ALL.iter().map(|&t| build_workspace(t)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn turn_monotone_and_matches_polyline() {
        let turns: Vec<f64> = TaskId::ALL
            .iter()
            .map(|&t| build_workspace(t).cumulative_turn_deg)
            .collect();
        assert_eq!(turns, vec![30.0, 90.0, 150.0]);
        for t in TaskId::ALL {
            let ws = build_workspace(t);
            let from_line = ws.corridor.centerline.cumulative_turn_deg();
            assert!((from_line - ws.cumulative_turn_deg).abs() < 1e-9);
        }
    }

    #[test]
    fn arc_length_ordering() {
        // Independent recount from raw vertex distances.
        let len = |t| {
            let ws = build_workspace(t);
            let p = &ws.corridor.centerline.points;
            (1..p.len())
                .map(|i| ((p[i].x - p[i - 1].x).powi(2) + (p[i].y - p[i - 1].y).powi(2)).sqrt())
                .sum::<f64>()
        };
        let (a, b, c) = (len(TaskId::A), len(TaskId::B), len(TaskId::C));
        assert!(c >= b && b >= a, "lengths {a} {b} {c}");
    }

    #[test]
    fn construction_invariants() {
        for t in TaskId::ALL {
            let ws = build_workspace(t);
            for p in &ws.corridor.centerline.points {
                assert!(ws.bounds.contains(*p));
            }
            let c = ws.corridor.centerline.project(ws.cargo_start);
            assert!(c.distance < 1e-9);
            let g = ws.corridor.centerline.project(ws.goal_region.center);
            assert!(g.distance < 1e-9);
            let (l, r) = ws.corridor.clearances(ws.cargo_start);
            assert!(l > 0.0 && r > 0.0);
            // Walls of distinct legs never overlap.
            let pts = &ws.corridor.centerline.points;
            for i in 0..pts.len() - 1 {
                for j in i + 2..pts.len() - 1 {
                    let mid = (pts[j] + pts[j + 1]) * 0.5;
                    let seg = Polyline::new(vec![pts[i], pts[i + 1]]);
                    assert!(seg.project(mid).distance > 2.0 * ws.corridor.half_width);
                }
            }
        }
    }

    #[test]
    fn projection_and_sampling_agree() {
        let ws = build_workspace(TaskId::C);
        let line = &ws.corridor.centerline;
        let total = line.length();
        for k in 0..=50 {
            let s = total * k as f64 / 50.0;
            let p = line.point_at(s);
            let pr = line.project(p);
            assert!(pr.distance < 1e-9);
            assert!((pr.arc - s).abs() < 1e-6, "s={s} arc={}", pr.arc);
        }
    }

    #[test]
    fn confine_keeps_points_inside() {
        let ws = build_workspace(TaskId::B);
        let p = Vec2::new(640.0, 100.0);
        let q = ws.corridor.confine(p, 48.0);
        assert!(ws.corridor.centerline.project(q).distance <= 48.0 + 1e-9);
        let inside = ws.cargo_start;
        assert_eq!(ws.corridor.confine(inside, 48.0), inside);
    }

    #[test]
    fn task_parse_round_trip() {
        for t in TaskId::ALL {
            assert_eq!(t.to_string().parse::<TaskId>().unwrap(), t);
        }
        assert!("D".parse::<TaskId>().is_err());
    }
}
