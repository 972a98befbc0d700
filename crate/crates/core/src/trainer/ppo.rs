use super::rollout::Rollout;
use super::{Hyperparams, TrainError};
use crate::policy::scalar::Scalar;
use crate::policy::{log_softmax, PolicyParams, ShapeError};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
pub fn ppo_clip_objective(ratio: f64, advantage: f64, clip_range: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_range, 1.0 + clip_range);
    (ratio * advantage).min(clipped * advantage)
}

/// Clip range in effect with `remaining` of the budget left (1 at the start, 0 at the end).
pub fn clip_at(hp: &Hyperparams, remaining: f64) -> f64 {
    match hp.clip_schedule {
        super::ClipSchedule::Constant => hp.clip_range,
        super::ClipSchedule::Linear => hp.clip_range * remaining.clamp(0.0, 1.0),
    }
}

/// Zero mean, unit (population) variance.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

#[derive(Clone, Copy, Debug)]
pub struct Minibatch<'a, T> {
    pub obs: &'a [T],
    pub actions: &'a [usize],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossCoefs {
    pub clip_range: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
}

/// Total loss `−mean(clip objective) + c_v·MSE(V, R) − c_e·mean(H)` and its gradient.
pub fn loss_and_grad<T: Scalar>(
    params: &PolicyParams<T>,
    mb: Minibatch<'_, T>,
    coefs: LossCoefs,
) -> Result<(LossReport, Vec<T>), ShapeError> {
    let b = mb.actions.len();
    let p = params.arch.n_actions;
    let cache = params.forward_batch(mb.obs, b)?;
    let bf = b as f64;
    let mut dlogits = vec![T::zero(); b * p];
    let mut dvalues = vec![T::zero(); b];
    let mut r = LossReport::default();
    let mut clipped = 0usize;
    for i in 0..b {
        let z: Vec<f64> = cache.logits[i * p..(i + 1) * p].iter().map(|v| v.into_f64()).collect();
        let logp = log_softmax(&z);
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let a = mb.actions[i];
        let ratio = (logp[a] - mb.old_log_probs[i]).exp();
        let adv = mb.advantages[i];
        let obj = ppo_clip_objective(ratio, adv, coefs.clip_range);
        let ent: f64 = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        let v = cache.values[i].into_f64();
        let err = v - mb.returns[i];
        r.policy_loss -= obj / bf;
        r.value_loss += err * err / bf;
        r.entropy += ent / bf;
        r.approx_kl += ((ratio - 1.0) - (logp[a] - mb.old_log_probs[i])) / bf;
        if (ratio - 1.0).abs() > coefs.clip_range {
            clipped += 1;
        }
        let clipped_ratio = ratio.clamp(1.0 - coefs.clip_range, 1.0 + coefs.clip_range);
        let active = ratio * adv <= clipped_ratio * adv;
        for j in 0..p {
            let onehot = if j == a { 1.0 } else { 0.0 };
            let mut g = 0.0;
            if active {
                g -= adv * ratio * (onehot - probs[j]) / bf;
            }
            g += coefs.entropy_coef * probs[j] * (logp[j] + ent) / bf;
            dlogits[i * p + j] = T::of_f64(g);
        }
        dvalues[i] = T::of_f64(2.0 * coefs.value_coef * err / bf);
    }
    r.clip_fraction = clipped as f64 / bf;
    r.total = r.policy_loss + coefs.value_coef * r.value_loss - coefs.entropy_coef * r.entropy;
    let grad = params.backward(&cache, &dlogits, &dvalues);
    r.grad_norm = grad.iter().map(|g| g.into_f64().powi(2)).sum::<f64>().sqrt();
    Ok((r, grad))
}

/// Adaptive moment estimation with decay constants (0.9, 0.999) and ε = 1e-8.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step<T: Scalar>(&mut self, params: &mut [T], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t as i32);
        let c2 = 1.0 - Self::B2.powi(self.t as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            let step = lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            *p = T::of_f64(p.into_f64() - step);
        }
    }
}

/// Runs the configured epochs of shuffled minibatch steps over a filled rollout.
pub fn update<R: Rng + ?Sized>(
    params: &mut PolicyParams<f32>,
    adam: &mut Adam,
    rollout: &Rollout,
    hp: &Hyperparams,
    clip_range: f64,
    rng: &mut R,
    update_index: u64,
) -> Result<LossReport, TrainError> {
    let n = rollout.len();
    let len = params.arch.input_len();
    if rollout.obs.len() != n * len {
        return Err(TrainError::LengthMismatch(format!(
            "{} observation values for {} steps of {}",
            rollout.obs.len(),
            n,
            len
        )));
    }
    if n == 0 {
        return Ok(LossReport::default());
    }
    let coefs = LossCoefs {
        clip_range,
        value_coef: hp.value_coef,
        entropy_coef: hp.entropy_coef,
    };
    let backup = (params.clone(), adam.clone());
    let mut idx: Vec<usize> = (0..n).collect();
    let mut sum = LossReport::default();
    let mut count = 0usize;
    let mut obs = Vec::new();
    for _ in 0..hp.epochs_per_update {
        idx.shuffle(rng);
        for chunk in idx.chunks(hp.minibatch_size) {
            obs.clear();
            for &i in chunk {
                obs.extend_from_slice(&rollout.obs[i * len..(i + 1) * len]);
            }
            let actions: Vec<usize> = chunk.iter().map(|&i| rollout.actions[i]).collect();
            let old: Vec<f64> = chunk.iter().map(|&i| rollout.log_probs[i]).collect();
            let mut adv: Vec<f64> = chunk.iter().map(|&i| rollout.advantages[i]).collect();
            let ret: Vec<f64> = chunk.iter().map(|&i| rollout.returns[i]).collect();
            normalize_advantages(&mut adv);
            let mb = Minibatch {
                obs: &obs,
                actions: &actions,
                old_log_probs: &old,
                advantages: &adv,
                returns: &ret,
            };
            let (rep, grad) = loss_and_grad(params, mb, coefs)?;
            if !rep.total.is_finite() || !rep.grad_norm.is_finite() {
                let what = if rep.total.is_finite() { "gradient" } else { "loss" };
                log::error!("update {update_index}: non-finite {what}: {rep:?}");
                *params = backup.0;
                *adam = backup.1;
                return Err(TrainError::NonFinite {
                    what: what.into(),
                    update: update_index,
                });
            }
            let scale = if rep.grad_norm > hp.max_grad_norm {
                hp.max_grad_norm / (rep.grad_norm + 1e-6)
            } else {
                1.0
            };
            let g: Vec<f64> = grad.iter().map(|&v| v as f64 * scale).collect();
            adam.step(&mut params.data, &g, hp.learning_rate);
            sum.total += rep.total;
            sum.policy_loss += rep.policy_loss;
            sum.value_loss += rep.value_loss;
            sum.entropy += rep.entropy;
            sum.clip_fraction += rep.clip_fraction;
            sum.approx_kl += rep.approx_kl;
            sum.grad_norm += rep.grad_norm;
            count += 1;
        }
    }
    let c = count as f64;
    Ok(LossReport {
        total: sum.total / c,
        policy_loss: sum.policy_loss / c,
        value_loss: sum.value_loss / c,
        entropy: sum.entropy / c,
        clip_fraction: sum.clip_fraction / c,
        approx_kl: sum.approx_kl / c,
        grad_norm: sum.grad_norm / c,
    })
}
