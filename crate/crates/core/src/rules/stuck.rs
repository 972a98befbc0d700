use crate::geom::Coord;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Number of recent moves inspected by [`detect_stuck`].
pub const STUCK_WINDOW: usize = 8;

/// Ring buffer of the last [`STUCK_WINDOW`] (position, distance-to-goal) pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    entries: VecDeque<(Coord, f64)>,
}

impl History {
    pub fn push(&mut self, position: Coord, distance: f64) {
        if self.entries.len() == STUCK_WINDOW {
            self.entries.pop_front();
        }
        self.entries.push_back((position, distance));
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> Vec<(Coord, f64)> {
        self.entries.iter().copied().collect()
    }

    pub fn is_stuck(&self) -> bool {
        detect_stuck(&self.entries())
    }
}

/// True when the window is full, a position repeats and the distance never fell
/// below its value at the start of the window.
pub fn detect_stuck(history: &[(Coord, f64)]) -> bool {
    if history.len() < STUCK_WINDOW {
        return false;
    }
    let w = &history[history.len() - STUCK_WINDOW..];
    let repeats = w
        .iter()
        .enumerate()
        .any(|(i, (p, _))| w[i + 1..].iter().any(|(q, _)| q == p));
    let start = w[0].1;
    let min = w.iter().map(|&(_, d)| d).fold(f64::INFINITY, f64::min);
    repeats && min >= start
}
