use super::{line_of_sight, RulesError};
use crate::env::EnvState;
use crate::geom::{euclidean_distance, Coord};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Angular step between consecutive fictitious targets.
pub const ANGLE_STEP: f64 = PI / 4.0;
/// Waypoints in one full revolution.
pub const STEPS_PER_TURN: u32 = 8;
const SNAP_REACH: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rotation {
    /// Increasing angle in grid coordinates (x right, y down).
    Ccw,
    Cw,
}

impl Rotation {
    pub fn sign(self) -> f64 {
        match self {
            Rotation::Ccw => 1.0,
            Rotation::Cw => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvoidancePlan {
    pub obstacle_id: usize,
    pub center: Coord,
    pub circle_radius: i32,
    pub start_angle: f64,
    pub current_angle: f64,
    pub rotation: Rotation,
    pub fictitious_target: Coord,
    /// Angular steps taken from `start_angle`.
    pub steps: u32,
    /// Cycles spent heading for the current fictitious target.
    pub age: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AvoidanceStep {
    Finished,
    Continue(AvoidancePlan),
    Failed,
}

pub fn circle_radius(half_extent: i32, safety_margin: i32) -> i32 {
    half_extent + safety_margin + 2
}

/// Free cell nearest to the rounded circle point at `angle`, searched within two cells of it.
fn waypoint_at(state: &EnvState, center: Coord, radius: i32, angle: f64, z: i32) -> Option<Coord> {
    let rx = (center.x as f64 + radius as f64 * angle.cos()).round() as i32;
    let ry = (center.y as f64 + radius as f64 * angle.sin()).round() as i32;
    let mut best: Option<(i32, Coord)> = None;
    for dx in -SNAP_REACH..=SNAP_REACH {
        for dy in -SNAP_REACH..=SNAP_REACH {
            let c = Coord::new(rx + dx, ry + dy, z);
            if state.is_forbidden(c) {
                continue;
            }
            let d = dx * dx + dy * dy;
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, c));
            }
        }
    }
    best.map(|(_, c)| c)
}

fn first_waypoint(
    state: &EnvState,
    center: Coord,
    radius: i32,
    start: f64,
    rotation: Rotation,
    from_step: u32,
    z: i32,
) -> Option<(u32, Coord)> {
    (from_step..=STEPS_PER_TURN).find_map(|k| {
        let angle = start + rotation.sign() * k as f64 * ANGLE_STEP;
        waypoint_at(state, center, radius, angle, z).map(|c| (k, c))
    })
}

/// Starts circling `obstacle_id` from `from`, turning toward the side nearer `goal`.
pub fn begin_avoidance(
    state: &EnvState,
    from: Coord,
    goal: Coord,
    obstacle_id: usize,
) -> Result<AvoidancePlan, RulesError> {
    let o = state
        .obstacles
        .get(obstacle_id)
        .ok_or(RulesError::UnknownObstacle(obstacle_id))?;
    let radius = circle_radius(o.half_extent, o.safety_margin);
    let center = Coord::new(o.center.x, o.center.y, from.z);
    let start = ((from.y - center.y) as f64).atan2((from.x - center.x) as f64);
    let mut best: Option<(f64, Rotation, u32, Coord)> = None;
    for rotation in [Rotation::Ccw, Rotation::Cw] {
        if let Some((k, wp)) = first_waypoint(state, center, radius, start, rotation, 1, from.z) {
            let d = euclidean_distance(wp, goal);
            if best.is_none_or(|(bd, ..)| d < bd - 1e-9) {
                best = Some((d, rotation, k, wp));
            }
        }
    }
    let (_, rotation, steps, wp) = best.ok_or(RulesError::AvoidanceImpossible(obstacle_id))?;
    Ok(AvoidancePlan {
        obstacle_id,
        center,
        circle_radius: radius,
        start_angle: start,
        current_angle: start + rotation.sign() * steps as f64 * ANGLE_STEP,
        rotation,
        fictitious_target: wp,
        steps,
        age: 0,
    })
}

/// Re-checks the line to `goal` and either finishes or moves to the next waypoint.
pub fn advance_avoidance(state: &EnvState, pos: Coord, goal: Coord, plan: &AvoidancePlan) -> AvoidanceStep {
    if line_of_sight(state, pos, goal).is_none() {
        return AvoidanceStep::Finished;
    }
    match first_waypoint(
        state,
        plan.center,
        plan.circle_radius,
        plan.start_angle,
        plan.rotation,
        plan.steps + 1,
        plan.center.z,
    ) {
        Some((k, wp)) => AvoidanceStep::Continue(AvoidancePlan {
            steps: k,
            current_angle: plan.start_angle + plan.rotation.sign() * k as f64 * ANGLE_STEP,
            fictitious_target: wp,
            age: 0,
            ..plan.clone()
        }),
        None => AvoidanceStep::Failed,
    }
}
