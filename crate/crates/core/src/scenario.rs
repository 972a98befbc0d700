//! Scenario description shared by the environment, controller, evaluation and service.

use crate::env::GridConfig;
use crate::geom::Metric;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Every target must be reached by occupying its cell.
    #[default]
    Reach,
    /// Targets are found by bringing them into an observation window.
    Search,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dims {
    #[default]
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

/// Where DL-mode actions come from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySource {
    /// A trained parameter file.
    Trained { path: PathBuf },
    /// Metric-greedy stand-in that needs no training.
    #[default]
    GreedyOracle,
    /// No learned component; rule engine only.
    RulesOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Rule engine (avoidance and move vetoes) active.
    pub rules: bool,
    /// Distance-delta reward term and shaped observation values active.
    pub shaping: bool,
    /// Manhattan multi-path distance instead of Euclidean.
    pub alt_distance: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Self {
            rules: true,
            shaping: true,
            alt_distance: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub task: Task,
    pub dims: Dims,
    pub grid: GridConfig,
    pub n_agents: usize,
    pub n_targets: usize,
    pub n_obstacles: usize,
    pub targets_moving: bool,
    pub n_groups: usize,
    pub group_zone_fraction: f64,
    pub max_cycles: u64,
    pub policy: PolicySource,
    pub ablations: Ablations,
    /// Cycles without a new find before local search gives up.
    pub local_search_budget: u32,
    /// Distance between sweep lanes.
    pub lane_spacing: i32,
    pub shaping_coef: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            task: Task::Reach,
            dims: Dims::TwoD,
            grid: GridConfig::default(),
            n_agents: 2,
            n_targets: 4,
            n_obstacles: 0,
            targets_moving: false,
            n_groups: 1,
            group_zone_fraction: 0.2,
            max_cycles: 200,
            policy: PolicySource::GreedyOracle,
            ablations: Ablations::default(),
            local_search_budget: 60,
            lane_spacing: 10,
            shaping_coef: 1.0,
        }
    }
}

impl ScenarioSpec {
    pub fn metric(&self) -> Metric {
        if self.ablations.alt_distance {
            Metric::Manhattan
        } else {
            Metric::Euclidean
        }
    }

    pub fn n_actions(&self) -> usize {
        crate::geom::Action::count(self.grid.depth)
    }

    /// Side of a search-group zone in cells.
    pub fn zone_side(&self) -> i32 {
        let m = self.grid.width.min(self.grid.height) as f64;
        (self.group_zone_fraction * m).round() as i32
    }

    pub fn validate(&self) -> Result<(), String> {
        self.grid.validate()?;
        match (self.dims, self.grid.depth) {
            (Dims::TwoD, 1) => {}
            (Dims::TwoD, d) => return Err(format!("2d scenario needs grid.depth = 1, got {d}")),
            (Dims::ThreeD, 1) => return Err("3d scenario needs grid.depth >= 20".into()),
            (Dims::ThreeD, _) => {}
        }
        if self.n_agents == 0 {
            return Err("n_agents must be at least 1".into());
        }
        if self.n_targets == 0 {
            return Err("n_targets must be at least 1".into());
        }
        if self.max_cycles == 0 {
            return Err("max_cycles must be positive".into());
        }
        if !(1..=20).contains(&self.lane_spacing) {
            return Err("lane_spacing must lie in 1..=20".into());
        }
        if !self.shaping_coef.is_finite() {
            return Err("shaping_coef must be finite".into());
        }
        if self.task == Task::Search {
            if self.dims != Dims::TwoD {
                return Err("search scenarios are 2d only".into());
            }
            if self.grid.step_cells != 1 {
                return Err("search scenarios use grid.step_cells = 1".into());
            }
            if self.n_groups == 0 || self.n_targets < self.n_groups {
                return Err("search needs 1 <= n_groups <= n_targets".into());
            }
            if !(self.group_zone_fraction > 0.0 && self.group_zone_fraction <= 1.0) {
                return Err("group_zone_fraction must lie in (0, 1]".into());
            }
            let side = self.zone_side();
            let inner_w = self.grid.width - 2 * self.grid.margin;
            let inner_h = self.grid.height - 2 * self.grid.margin;
            if side < 1 || side > inner_w || side > inner_h {
                return Err(format!("group zone side {side} does not fit the interior"));
            }
        }
        Ok(())
    }
}
