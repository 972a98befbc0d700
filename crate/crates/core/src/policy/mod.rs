//! Convolutional actor-critic network: inference, initialization and parameter files.

mod file;
mod net;
pub mod scalar;

pub use file::{ParamsError, MAGIC, VERSION};
pub use net::{
    log_softmax, probs_from_logits, ActionDistribution, ArchSpec, Cache, PolicyParams, ShapeError, TENSOR_NAMES,
};

use crate::env::Observation;
use crate::geom::Action;
use rand::Rng;

/// Inverse-CDF draw over the fixed action order.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Index of the largest probability, lowest index on ties.
pub fn greedy_index(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

pub fn sample_action<R: Rng + ?Sized>(dist: &ActionDistribution, rng: &mut R) -> Action {
    Action::from_index(sample_index(&dist.probs, rng)).expect("distribution longer than the action set")
}

pub fn greedy_action(dist: &ActionDistribution) -> Action {
    Action::from_index(greedy_index(&dist.probs)).expect("distribution longer than the action set")
}

impl PolicyParams<f32> {
    /// Action distribution for an environment observation.
    pub fn distribution(&self, obs: &Observation) -> Result<ActionDistribution, ShapeError> {
        self.forward(&obs.values)
    }
}
