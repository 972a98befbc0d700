//! Grid coordinates, actions and distance metrics.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Sub};

/// Integer cell coordinate. `z` is always 0 on 2D grids.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub x: i32,
    pub y: i32,
    #[serde(default)]
    pub z: i32,
}

impl Coord {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    pub const fn xy(x: i32, y: i32) -> Self {
        Self { x, y, z: 0 }
    }

    pub fn get(self, axis: usize) -> i32 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn chebyshev(self, other: Coord) -> i32 {
        (self.x - other.x)
            .abs()
            .max((self.y - other.y).abs())
            .max((self.z - other.z).abs())
    }
}

impl Add for Coord {
    type Output = Coord;
    fn add(self, o: Coord) -> Coord {
        Coord::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Coord {
    type Output = Coord;
    fn sub(self, o: Coord) -> Coord {
        Coord::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Straight-line distance in cells.
pub fn euclidean_distance(a: Coord, b: Coord) -> f64 {
    let d = b - a;
    let s = (d.x as i64).pow(2) + (d.y as i64).pow(2) + (d.z as i64).pow(2);
    (s as f64).sqrt()
}

/// Sum of per-axis absolute differences.
pub fn manhattan_distance(a: Coord, b: Coord) -> i64 {
    let d = b - a;
    d.x.unsigned_abs() as i64 + d.y.unsigned_abs() as i64 + d.z.unsigned_abs() as i64
}

/// Distance used for rewards, observations and target assignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
}

impl Metric {
    pub fn distance(self, a: Coord, b: Coord) -> f64 {
        match self {
            Metric::Euclidean => euclidean_distance(a, b),
            Metric::Manhattan => manhattan_distance(a, b) as f64,
        }
    }
}

/// Movement actions in policy-output order. Forward is −y, Right is +x, Up is +z.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Forward,
    Backward,
    Left,
    Right,
    Up,
    Down,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Forward,
        Action::Backward,
        Action::Left,
        Action::Right,
        Action::Up,
        Action::Down,
    ];

    /// Number of actions available on a grid of the given depth.
    pub fn count(depth: i32) -> usize {
        if depth > 1 {
            6
        } else {
            4
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn delta(self) -> Coord {
        match self {
            Action::Forward => Coord::new(0, -1, 0),
            Action::Backward => Coord::new(0, 1, 0),
            Action::Left => Coord::new(-1, 0, 0),
            Action::Right => Coord::new(1, 0, 0),
            Action::Up => Coord::new(0, 0, 1),
            Action::Down => Coord::new(0, 0, -1),
        }
    }

    pub fn axis(self) -> usize {
        match self {
            Action::Left | Action::Right => 0,
            Action::Forward | Action::Backward => 1,
            Action::Up | Action::Down => 2,
        }
    }

    pub fn valid_for(self, depth: i32) -> bool {
        self.index() < Self::count(depth)
    }

    /// Unit step along `axis` toward `sign` (positive or negative).
    pub fn along(axis: usize, sign: i32) -> Action {
        match (axis, sign > 0) {
            (0, true) => Action::Right,
            (0, false) => Action::Left,
            (1, true) => Action::Backward,
            (1, false) => Action::Forward,
            (_, true) => Action::Up,
            (_, false) => Action::Down,
        }
    }
}
