use super::{EnvError, EnvState, HALF_WINDOW, WINDOW};
use crate::geom::Coord;
use serde::{Deserialize, Serialize};

/// Agent-centered value window, stored as depth slices of 20×20 rows (x fastest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub center: Coord,
    /// 1 on 2D grids, 20 on 3D grids.
    pub slices: usize,
    pub values: Vec<f32>,
}

impl Observation {
    pub const SIDE: usize = WINDOW as usize;

    pub fn len_for(slices: usize) -> usize {
        slices * Self::SIDE * Self::SIDE
    }

    /// Grid cell shown at flat index `i`.
    pub fn cell_at(&self, i: usize) -> Coord {
        let side = Self::SIDE;
        let x = (i % side) as i32 - HALF_WINDOW;
        let y = ((i / side) % side) as i32 - HALF_WINDOW;
        let z = if self.slices > 1 {
            (i / (side * side)) as i32 - HALF_WINDOW
        } else {
            0
        };
        self.center + Coord::new(x, y, z)
    }

    /// Flat index of grid cell `c`, if it lies in the window.
    pub fn index_of(&self, c: Coord) -> Option<usize> {
        let d = c - self.center;
        let side = Self::SIDE as i32;
        let ok = |v: i32| (-HALF_WINDOW..HALF_WINDOW).contains(&v);
        if !ok(d.x) || !ok(d.y) || (self.slices > 1 && !ok(d.z)) || (self.slices == 1 && d.z != 0) {
            return None;
        }
        let z = if self.slices > 1 { d.z + HALF_WINDOW } else { 0 };
        Some((((z * side) + d.y + HALF_WINDOW) * side + d.x + HALF_WINDOW) as usize)
    }
}

impl EnvState {
    /// Extracts the observation window of a live agent.
    pub fn observation(&self, id: usize) -> Result<Observation, EnvError> {
        let a = self.agent(id)?;
        if !a.alive {
            return Err(EnvError::DeadAgent(id));
        }
        let center = a.position;
        let slices = if self.config.is_3d() { WINDOW as usize } else { 1 };
        let reference = self.reference(id);
        let d_cur = reference.map(|r| self.metric.distance(center, r));
        let mut values = Vec::with_capacity(Observation::len_for(slices));
        let zs: Vec<i32> = if slices > 1 {
            (-HALF_WINDOW..HALF_WINDOW).collect()
        } else {
            vec![0]
        };
        for dz in zs {
            for dy in -HALF_WINDOW..HALF_WINDOW {
                for dx in -HALF_WINDOW..HALF_WINDOW {
                    let c = center + Coord::new(dx, dy, dz);
                    let v = if self.is_forbidden(c) {
                        -1.0
                    } else {
                        match (reference, d_cur) {
                            (Some(r), _) if r == c => 1.0,
                            (Some(r), Some(d0)) if self.shaping => {
                                let v = (d0 - self.metric.distance(c, r)) / HALF_WINDOW as f64;
                                v.clamp(-1.0, 1.0) as f32
                            }
                            _ => 0.0,
                        }
                    };
                    values.push(v);
                }
            }
        }
        Ok(Observation { center, slices, values })
    }
}
