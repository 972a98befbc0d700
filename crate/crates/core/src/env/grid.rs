use super::HALF_WINDOW;
use serde::{Deserialize, Serialize};

/// Static grid geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub width: i32,
    pub height: i32,
    /// 1 for 2D grids.
    pub depth: i32,
    /// Forbidden border band width.
    pub margin: i32,
    pub obstacle_half_extent: i32,
    pub obstacle_safety_margin: i32,
    /// Cells covered by one move (stops early on the reference plane or on a target).
    pub step_cells: i32,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            width: 200,
            height: 200,
            depth: 1,
            margin: 2,
            obstacle_half_extent: 3,
            obstacle_safety_margin: 1,
            step_cells: 1,
        }
    }
}

impl GridConfig {
    pub fn is_3d(&self) -> bool {
        self.depth > 1
    }

    pub fn cell_count(&self) -> usize {
        self.width as usize * self.height as usize * self.depth as usize
    }

    /// Footprint half-width of an obstacle including its safety ring.
    pub fn obstacle_reach(&self) -> i32 {
        self.obstacle_half_extent + self.obstacle_safety_margin
    }

    pub fn validate(&self) -> Result<(), String> {
        let min_side = 2 * (self.margin + HALF_WINDOW);
        if self.margin < 1 {
            return Err("grid.margin must be at least 1".into());
        }
        if self.width < min_side || self.height < min_side {
            return Err(format!(
                "grid width and height must be at least {min_side} for margin {}",
                self.margin
            ));
        }
        if self.depth != 1 && self.depth < 2 * HALF_WINDOW {
            return Err(format!("grid.depth must be 1 or at least {}", 2 * HALF_WINDOW));
        }
        if self.obstacle_half_extent < 1 || self.obstacle_safety_margin < 0 {
            return Err("obstacle extents must be positive".into());
        }
        if !(1..=HALF_WINDOW).contains(&self.step_cells) {
            return Err(format!("grid.step_cells must lie in 1..={HALF_WINDOW}"));
        }
        Ok(())
    }
}
