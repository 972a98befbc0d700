//! Per-decision explanations: LIME surrogates and sampled Shapley attributions over cell groups.

mod lime;
mod render;
mod shap;

pub use lime::lime_explain;
pub use render::{render_contributions, RgbaImage, LIME_NEGATIVE, LIME_POSITIVE, SHAP_NEGATIVE, SHAP_POSITIVE};
pub use shap::shap_explain;

use crate::env::WINDOW;
use crate::policy::{probs_from_logits, PolicyParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error("invalid perturbation scheme: {0}")]
    Scheme(String),
    #[error("regression is rank deficient (rank {rank} of {needed})")]
    RankDeficient { rank: usize, needed: usize },
    #[error("observation has {got} values, scheme expects {expected}")]
    Shape { expected: usize, got: usize },
    #[error("model produced non-finite output")]
    NonFinite,
}

/// Anything mapping a batch of observations to action probabilities.
pub trait ProbabilityModel {
    fn n_outputs(&self) -> usize;
    /// `inputs` holds `batch` observations back to back.
    fn probs(&self, inputs: &[f32], batch: usize) -> Vec<Vec<f64>>;
}

impl ProbabilityModel for PolicyParams<f32> {
    fn n_outputs(&self) -> usize {
        self.arch.n_actions
    }

    fn probs(&self, inputs: &[f32], batch: usize) -> Vec<Vec<f64>> {
        let (logits, _) = self
            .evaluate(inputs, batch)
            .expect("explained observation matches the network");
        logits.iter().map(|l| probs_from_logits(l)).collect()
    }
}

/// Model defined by a per-observation closure.
pub struct FnModel<F> {
    pub n_outputs: usize,
    pub len: usize,
    pub f: F,
}

impl<F: Fn(&[f32]) -> Vec<f64>> ProbabilityModel for FnModel<F> {
    fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    fn probs(&self, inputs: &[f32], batch: usize) -> Vec<Vec<f64>> {
        (0..batch)
            .map(|i| (self.f)(&inputs[i * self.len..(i + 1) * self.len]))
            .collect()
    }
}

/// Partition of the observation cells into groups that are masked together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub slices: usize,
    pub side: usize,
    pub groups: Vec<Vec<usize>>,
}

impl Segmentation {
    /// Square (2D) or cubic (3D) blocks of `block` cells on a side.
    pub fn blocks(slices: usize, side: usize, block: usize) -> Self {
        let block = block.max(1);
        let nb = side.div_ceil(block);
        let nz = if slices > 1 { slices.div_ceil(block) } else { 1 };
        let mut groups = vec![Vec::new(); nz * nb * nb];
        for z in 0..slices {
            for y in 0..side {
                for x in 0..side {
                    let bz = if slices > 1 { z / block } else { 0 };
                    let g = (bz * nb + y / block) * nb + x / block;
                    groups[g].push((z * side + y) * side + x);
                }
            }
        }
        Self { slices, side, groups }
    }

    pub fn len(&self) -> usize {
        self.slices * self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Default grouping for an observation: 2×2 blocks in 2D, 4×4×4 in 3D.
    pub fn for_slices(slices: usize) -> Self {
        let side = WINDOW as usize;
        Self::blocks(slices, side, if slices > 1 { 4 } else { 2 })
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut seen = vec![false; self.len()];
        for (g, cells) in self.groups.iter().enumerate() {
            if cells.is_empty() {
                return Err(format!("group {g} is empty"));
            }
            for &c in cells {
                if c >= self.len() || seen[c] {
                    return Err(format!("cell {c} is outside the window or in two groups"));
                }
                seen[c] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err("groups do not cover the window".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationScheme {
    pub segmentation: Segmentation,
    /// Value written into cells of absent groups.
    pub mask_value: f32,
    pub n_samples: usize,
    /// LIME locality kernel width; defaults to 0.25·√groups.
    pub kernel_width: Option<f64>,
}

impl PerturbationScheme {
    pub fn new(slices: usize) -> Self {
        Self {
            segmentation: Segmentation::for_slices(slices),
            mask_value: 0.0,
            n_samples: 1000,
            kernel_width: None,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.segmentation.groups.len()
    }

    pub fn kernel_width(&self) -> f64 {
        self.kernel_width.unwrap_or(0.25 * (self.n_groups() as f64).sqrt())
    }

    pub fn validate(&self) -> Result<(), ExplainError> {
        self.segmentation.validate().map_err(ExplainError::Scheme)?;
        if self.n_samples < self.n_groups() + 1 {
            return Err(ExplainError::Scheme(format!(
                "{} samples for {} groups; need at least groups + 1",
                self.n_samples,
                self.n_groups()
            )));
        }
        if !self.kernel_width().is_finite() || self.kernel_width() <= 0.0 {
            return Err(ExplainError::Scheme("kernel width must be positive".into()));
        }
        if !self.mask_value.is_finite() {
            return Err(ExplainError::Scheme("mask value must be finite".into()));
        }
        Ok(())
    }

    /// Copy of `obs` with the groups whose bit is false replaced by the mask value.
    pub fn apply(&self, obs: &[f32], present: &[bool], out: &mut Vec<f32>) {
        let start = out.len();
        out.extend_from_slice(obs);
        for (g, cells) in self.segmentation.groups.iter().enumerate() {
            if !present[g] {
                for &c in cells {
                    out[start + c] = self.mask_value;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lime,
    Shap,
}

/// Signed per-cell contributions for every action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionMap {
    pub method: Method,
    pub n_samples: usize,
    pub slices: usize,
    pub side: usize,
    /// `[action][cell]`, cells in observation order.
    pub values: Vec<Vec<f64>>,
    /// `[action][group]`.
    pub group_values: Vec<Vec<f64>>,
    /// LIME: weighted R² per action. SHAP: efficiency residual per action.
    pub fidelity: Vec<f64>,
    /// Action with the highest probability on the unperturbed observation.
    pub selected_action: usize,
}

impl ContributionMap {
    fn build(
        method: Method,
        scheme: &PerturbationScheme,
        group_values: Vec<Vec<f64>>,
        fidelity: Vec<f64>,
        selected_action: usize,
    ) -> Self {
        let seg = &scheme.segmentation;
        let len = seg.len();
        let values = group_values
            .iter()
            .map(|gv| {
                let mut cells = vec![0.0; len];
                for (g, members) in scheme.segmentation.groups.iter().enumerate() {
                    for &c in members {
                        cells[c] = gv[g];
                    }
                }
                cells
            })
            .collect();
        Self {
            method,
            n_samples: scheme.n_samples,
            slices: seg.slices,
            side: seg.side,
            values,
            group_values,
            fidelity,
            selected_action,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }
}

fn check_obs(scheme: &PerturbationScheme, obs: &[f32]) -> Result<(), ExplainError> {
    scheme.validate()?;
    if obs.len() != scheme.segmentation.len() {
        return Err(ExplainError::Shape {
            expected: scheme.segmentation.len(),
            got: obs.len(),
        });
    }
    Ok(())
}

fn argmax(p: &[f64]) -> usize {
    crate::policy::greedy_index(p)
}

/// Evaluates `masks` in fixed-size batches.
fn eval_masks<M: ProbabilityModel + ?Sized>(
    model: &M,
    scheme: &PerturbationScheme,
    obs: &[f32],
    masks: &[Vec<bool>],
) -> Result<Vec<Vec<f64>>, ExplainError> {
    const BATCH: usize = 64;
    let mut out = Vec::with_capacity(masks.len());
    let mut buf = Vec::with_capacity(BATCH * obs.len());
    for chunk in masks.chunks(BATCH) {
        buf.clear();
        for m in chunk {
            scheme.apply(obs, m, &mut buf);
        }
        let p = model.probs(&buf, chunk.len());
        if p.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ExplainError::NonFinite);
        }
        out.extend(p);
    }
    Ok(out)
}
