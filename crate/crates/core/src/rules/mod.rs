//! Expert rules: line of sight, stuck detection, obstacle circling and the lane sweep.

mod avoid;
mod los;
mod stuck;
mod sweep;

pub use avoid::{
    advance_avoidance, begin_avoidance, circle_radius, AvoidancePlan, AvoidanceStep, Rotation, ANGLE_STEP,
    STEPS_PER_TURN,
};
pub use los::{line_of_sight, segment_cells};
pub use stuck::{detect_stuck, History, STUCK_WINDOW};
pub use sweep::{
    partition_search_region, plan_lanes, sweep_next_action, Coverage, Heading, Rect, SweepPlan, SweepStep,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RulesError {
    #[error("no free cell on the circle around obstacle {0}")]
    AvoidanceImpossible(usize),
    #[error("unknown obstacle {0}")]
    UnknownObstacle(usize),
}
