use super::*;
use crate::policy::{ArchSpec, PolicyParams};
use crate::scenario::{ScenarioSpec, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Direct summation of discounted TD residuals, cut at episode ends.
fn gae_oracle(r: &[f64], v: &[f64], d: &[bool], last: f64, g: f64, l: f64) -> Vec<f64> {
    let n = r.len();
    let next = |t: usize| if t + 1 < n { v[t + 1] } else { last };
    let delta: Vec<f64> = (0..n)
        .map(|t| r[t] + g * next(t) * if d[t] { 0.0 } else { 1.0 } - v[t])
        .collect();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut w = 1.0;
            for k in t..n {
                sum += w * delta[k];
                if d[k] {
                    break;
                }
                w *= g * l;
            }
            sum
        })
        .collect()
}

#[test]
fn gae_telescopes_to_reward_sums() {
    let r = [1.0, -2.0, 0.5, 3.0];
    let (adv, ret) = compute_gae(&r, &[0.0; 4], &[false; 4], 0.0, 1.0, 1.0).unwrap();
    assert_eq!(adv, vec![2.5, 1.5, 3.5, 3.0]);
    assert_eq!(ret, adv);
}

#[test]
fn gae_lambda_zero_is_td_residual() {
    let r = [1.0, 0.0, 2.0];
    let v = [0.5, 0.25, 1.0];
    let (adv, _) = compute_gae(&r, &v, &[false, true, false], 4.0, 0.9, 0.0).unwrap();
    assert_eq!(adv, vec![1.0 + 0.9 * 0.25 - 0.5, 0.0 - 0.25, 2.0 + 0.9 * 4.0 - 1.0]);
}

#[test]
fn gae_matches_direct_summation() {
    let mut r = rng(1);
    for _ in 0..200 {
        let n = 10;
        let rew: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let val: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let done: Vec<bool> = (0..n).map(|_| r.random_bool(0.2)).collect();
        let last = r.random_range(-2.0..2.0);
        let (g, l) = (r.random_range(0.5..1.0), r.random_range(0.0..1.0));
        let (adv, ret) = compute_gae(&rew, &val, &done, last, g, l).unwrap();
        let want = gae_oracle(&rew, &val, &done, last, g, l);
        for t in 0..n {
            assert!((adv[t] - want[t]).abs() <= 1e-12);
            assert!((ret[t] - (want[t] + val[t])).abs() <= 1e-12);
        }
    }
}

#[test]
fn gae_rejects_length_mismatch() {
    assert!(matches!(
        compute_gae(&[1.0, 2.0], &[0.0], &[false, false], 0.0, 0.99, 0.95),
        Err(TrainError::LengthMismatch(_))
    ));
}

#[test]
fn clip_objective_hand_values() {
    assert_eq!(ppo_clip_objective(1.0, 2.0, 0.3), 2.0);
    assert_eq!(ppo_clip_objective(1.5, 1.0, 0.3), 1.3);
    assert_eq!(ppo_clip_objective(0.5, -1.0, 0.3), -0.7);
}

#[test]
fn normalization_gives_zero_mean_unit_variance() {
    let mut r = rng(2);
    let mut a: Vec<f64> = (0..256).map(|_| r.random_range(-5.0..20.0)).collect();
    normalize_advantages(&mut a);
    let n = a.len() as f64;
    let mean = a.iter().sum::<f64>() / n;
    let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() <= 1e-6);
    assert!((var - 1.0).abs() <= 1e-6);
}

fn toy() -> ArchSpec {
    ArchSpec {
        in_channels: 1,
        side: 3,
        conv_channels: 2,
        kernel: 3,
        strides: [1, 1],
        hidden: 4,
        n_actions: 2,
    }
}

struct Batch {
    obs: Vec<f64>,
    actions: Vec<usize>,
    old: Vec<f64>,
    adv: Vec<f64>,
    ret: Vec<f64>,
}

impl Batch {
    fn mb(&self) -> Minibatch<'_, f64> {
        Minibatch {
            obs: &self.obs,
            actions: &self.actions,
            old_log_probs: &self.old,
            advantages: &self.adv,
            returns: &self.ret,
        }
    }
}

/// Toy batch whose ratios sit away from the clip boundaries.
fn toy_batch(p: &PolicyParams<f64>, r: &mut ChaCha8Rng, b: usize) -> Batch {
    let obs: Vec<f64> = (0..b * 9).map(|_| r.random_range(-1.0..1.0)).collect();
    let (logits, _) = p.evaluate(&obs, b).unwrap();
    let actions: Vec<usize> = (0..b).map(|_| r.random_range(0..2)).collect();
    let old = (0..b)
        .map(|i| {
            let lp = crate::policy::log_softmax(&logits[i])[actions[i]];
            // ratios near 1 or well past 1 ± 0.3
            let shift = if i % 3 == 0 { 0.6 } else { r.random_range(-0.1..0.1) };
            lp - shift
        })
        .collect();
    Batch {
        obs,
        actions,
        old,
        adv: (0..b).map(|_| r.random_range(-2.0..2.0)).collect(),
        ret: (0..b).map(|_| r.random_range(-2.0..2.0)).collect(),
    }
}

fn check_gradient(coefs: LossCoefs, seed: u64) {
    let mut r = rng(seed);
    let mut p = PolicyParams::<f64>::init(toy(), &mut r).unwrap();
    for v in p.data.iter_mut() {
        *v += r.random_range(-0.3..0.3);
    }
    let batch = toy_batch(&p, &mut r, 6);
    let (_, g) = loss_and_grad(&p, batch.mb(), coefs).unwrap();
    let loss = |q: &PolicyParams<f64>| loss_and_grad(q, batch.mb(), coefs).unwrap().0.total;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, &gi) in g.iter().enumerate() {
        let mut hi = p.clone();
        hi.data[i] += h;
        let mut lo = p.clone();
        lo.data[i] -= h;
        let fd = (loss(&hi) - loss(&lo)) / (2.0 * h);
        let err = (fd - gi).abs() / fd.abs().max(gi.abs()).max(1e-6);
        worst = worst.max(err);
    }
    assert!(worst <= 1e-4, "{coefs:?}: max relative error {worst}");
}

#[test]
fn policy_term_gradient_matches_finite_differences() {
    check_gradient(
        LossCoefs {
            clip_range: 0.3,
            value_coef: 0.0,
            entropy_coef: 0.0,
        },
        3,
    );
}

#[test]
fn value_term_gradient_matches_finite_differences() {
    check_gradient(
        LossCoefs {
            clip_range: 0.3,
            value_coef: 0.5,
            entropy_coef: 0.0,
        },
        4,
    );
}

#[test]
fn entropy_term_gradient_matches_finite_differences() {
    check_gradient(
        LossCoefs {
            clip_range: 1e9,
            value_coef: 0.0,
            entropy_coef: 0.01,
        },
        5,
    );
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    check_gradient(
        LossCoefs {
            clip_range: 0.3,
            value_coef: 0.5,
            entropy_coef: 0.01,
        },
        6,
    );
}

#[test]
fn unbounded_clip_is_plain_surrogate() {
    let mut r = rng(7);
    let p = PolicyParams::<f64>::init(toy(), &mut r).unwrap();
    let batch = toy_batch(&p, &mut r, 16);
    let coefs = LossCoefs {
        clip_range: f64::INFINITY,
        value_coef: 0.0,
        entropy_coef: 0.0,
    };
    let (rep, _) = loss_and_grad(&p, batch.mb(), coefs).unwrap();
    let (logits, _) = p.evaluate(&batch.obs, 16).unwrap();
    let plain: f64 = (0..16)
        .map(|i| {
            let lp = crate::policy::log_softmax(&logits[i])[batch.actions[i]];
            (lp - batch.old[i]).exp() * batch.adv[i]
        })
        .sum::<f64>()
        / 16.0;
    assert!((rep.policy_loss + plain).abs() <= 1e-9);
    assert_eq!(rep.clip_fraction, 0.0);
}

fn small_scenario() -> ScenarioSpec {
    let mut s = ScenarioSpec::default();
    s.grid.width = 30;
    s.grid.height = 30;
    s.max_cycles = 40;
    s
}

fn small_hp(total: u64) -> Hyperparams {
    Hyperparams {
        total_cycles: total,
        rollout_length: 32,
        n_envs: 2,
        minibatch_size: 32,
        epochs_per_update: 2,
        ..Default::default()
    }
}

#[test]
fn zero_learning_rate_leaves_params_bit_exact() {
    let s = small_scenario();
    let hp = Hyperparams {
        learning_rate: 0.0,
        ..small_hp(64)
    };
    let p0 = PolicyParams::<f32>::init(ArchSpec::for_env(1, 4), &mut rng(1)).unwrap();
    let mut c = RolloutCollector::new(&s, 1, 2).unwrap();
    let (rollout, _) = c.collect(&p0, 32, &hp, 1).unwrap();
    let mut p = p0.clone();
    let mut adam = Adam::new(p.data.len());
    let rep = update(&mut p, &mut adam, &rollout, &hp, 0.3, &mut rng(2), 0).unwrap();
    assert_eq!(p.data, p0.data);
    assert!((0.0..=1.0).contains(&rep.clip_fraction));
    assert!(rep.entropy >= 0.0);
}

#[test]
fn zero_budget_returns_initial_params() {
    let s = small_scenario();
    let run = train(&s, &small_hp(0), 5, None, 1).unwrap();
    let init = PolicyParams::<f32>::init(ArchSpec::for_env(1, 4), &mut rng(5)).unwrap();
    assert_eq!(run.params, init);
    assert!(run.curve.is_empty());
}

#[test]
fn training_is_reproducible_and_bounded() {
    let s = small_scenario();
    let a = train(&s, &small_hp(512), 9, None, 1).unwrap();
    let b = train(&s, &small_hp(512), 9, None, 1).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.params, b.params);
    assert!(!a.curve.is_empty());
    for r in &a.reports {
        assert!((0.0..=1.0).contains(&r.clip_fraction));
        assert!(r.entropy >= 0.0);
    }
    let w = train(&s, &small_hp(512), 9, None, 2).unwrap();
    let w2 = train(&s, &small_hp(512), 9, None, 2).unwrap();
    assert_eq!(w.curve, w2.curve);
}

#[test]
fn checkpoints_and_curve_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let hp = Hyperparams {
        checkpoint_every: 128,
        ..small_hp(384)
    };
    let run = train(&small_scenario(), &hp, 2, Some(dir.path()), 1).unwrap();
    assert_eq!(run.checkpoints.len(), 3);
    for c in &run.checkpoints {
        assert!(c.exists());
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(c.with_extension("json")).unwrap()).unwrap();
        assert_eq!(side["seed"], 2);
    }
    let last = PolicyParams::load(run.checkpoints.last().unwrap()).unwrap();
    assert_eq!(last, run.params);
    let csv = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert!(csv.starts_with(CURVE_HEADER));
    assert_eq!(csv.lines().count(), run.curve.len() + 1);
}

#[test]
fn search_and_bad_hyperparams_are_rejected() {
    let s = ScenarioSpec {
        task: Task::Search,
        ..Default::default()
    };
    assert!(matches!(
        train(&s, &small_hp(10), 1, None, 1),
        Err(TrainError::Invalid(_))
    ));
    for hp in [
        Hyperparams {
            gamma: 0.0,
            ..small_hp(10)
        },
        Hyperparams {
            gae_lambda: 1.5,
            ..small_hp(10)
        },
        Hyperparams {
            clip_range: 0.0,
            ..small_hp(10)
        },
        Hyperparams {
            minibatch_size: 0,
            ..small_hp(10)
        },
    ] {
        assert!(matches!(
            train(&small_scenario(), &hp, 1, None, 1),
            Err(TrainError::Invalid(_))
        ));
    }
}

#[test]
fn non_finite_loss_aborts_the_update() {
    let s = small_scenario();
    let hp = small_hp(64);
    let p0 = PolicyParams::<f32>::init(ArchSpec::for_env(1, 4), &mut rng(1)).unwrap();
    let mut c = RolloutCollector::new(&s, 1, 2).unwrap();
    let (mut rollout, _) = c.collect(&p0, 32, &hp, 1).unwrap();
    rollout.returns[0] = f64::NAN;
    let mut p = p0.clone();
    let mut adam = Adam::new(p.data.len());
    let err = update(&mut p, &mut adam, &rollout, &hp, 0.3, &mut rng(3), 7).unwrap_err();
    assert!(matches!(err, TrainError::NonFinite { update: 7, .. }));
    assert_eq!(p, p0);
}

#[test]
fn linear_schedule_decays_clip() {
    let hp = Hyperparams {
        clip_schedule: ClipSchedule::Linear,
        ..Default::default()
    };
    assert_eq!(clip_at(&hp, 1.0), 0.3);
    assert!((clip_at(&hp, 0.5) - 0.15).abs() < 1e-15);
    assert_eq!(clip_at(&Hyperparams::default(), 0.1), 0.3);
}
