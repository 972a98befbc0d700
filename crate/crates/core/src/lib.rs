//! Multi-drone navigation simulator combining a learned policy with a rule engine.

pub mod cli;
pub mod codec;
pub mod controller;
pub mod env;
pub mod eval;
pub mod explain;
pub mod geom;
pub mod policy;
pub mod rules;
pub mod scenario;
pub mod service;
pub mod trainer;

pub use geom::{Action, Coord, Metric};
pub use scenario::{Ablations, Dims, PolicySource, ScenarioSpec, Task};
