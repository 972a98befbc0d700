//! PPO-Clip trainer: rollouts, advantage estimation, clipped-surrogate updates, checkpoints and curves.

mod gae;
mod ppo;
mod rollout;
mod train;

pub use gae::compute_gae;
pub use ppo::{
    clip_at, loss_and_grad, normalize_advantages, ppo_clip_objective, update, Adam, LossCoefs, LossReport, Minibatch,
};
pub use rollout::{Rollout, RolloutCollector, Transition, TRAIN_SEED_BASE};
pub use train::{train, CurveRow, TrainingRun, CURVE_HEADER, CURVE_WINDOW};

use crate::env::EnvError;
use crate::policy::{ParamsError, ShapeError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite {what} at update {update}")]
    NonFinite { what: String, update: u64 },
    #[error("invalid hyperparameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipSchedule {
    #[default]
    Constant,
    /// Decays linearly to zero with the remaining fraction of the cycle budget.
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub clip_range: f64,
    pub clip_schedule: ClipSchedule,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Cycles per environment between updates.
    pub rollout_length: usize,
    pub n_envs: usize,
    pub minibatch_size: usize,
    pub epochs_per_update: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub total_cycles: u64,
    /// Write a checkpoint every this many cycles; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            clip_range: 0.3,
            clip_schedule: ClipSchedule::Constant,
            gamma: 0.99,
            gae_lambda: 0.95,
            rollout_length: 2048,
            n_envs: 4,
            minibatch_size: 256,
            epochs_per_update: 10,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            total_cycles: 1_000_000,
            checkpoint_every: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Invalid(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if self.clip_range.is_nan() || self.clip_range <= 0.0 {
            return bad("clip_range must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.rollout_length == 0 || self.n_envs == 0 || self.minibatch_size == 0 || self.epochs_per_update == 0 {
            return bad("rollout_length, n_envs, minibatch_size and epochs_per_update must be positive");
        }
        if self.max_grad_norm.is_nan() || self.max_grad_norm <= 0.0 {
            return bad("max_grad_norm must be positive");
        }
        if !(self.value_coef.is_finite() && self.entropy_coef.is_finite()) {
            return bad("loss coefficients must be finite");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
