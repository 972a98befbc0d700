use super::ppo::{clip_at, update, Adam, LossReport};
use super::rollout::{EpisodeEnd, RolloutCollector};
use super::{Hyperparams, TrainError};
use crate::env::WINDOW;
use crate::policy::{ArchSpec, PolicyParams};
use crate::scenario::{ScenarioSpec, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::{Path, PathBuf};

pub const CURVE_HEADER: &str = "cycles,mean_episode_reward,success_rate";
/// Episodes in the sliding window behind each curve row.
pub const CURVE_WINDOW: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub cycles: u64,
    pub mean_episode_reward: f64,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRun {
    pub params: PolicyParams<f32>,
    pub curve: Vec<CurveRow>,
    pub reports: Vec<LossReport>,
    pub cycles: u64,
    pub episodes: u64,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainingRun {
    pub fn final_success_rate(&self) -> Option<f64> {
        self.curve.last().map(|r| r.success_rate)
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from(CURVE_HEADER);
        s.push('\n');
        for r in &self.curve {
            s.push_str(&format!("{},{},{}\n", r.cycles, r.mean_episode_reward, r.success_rate));
        }
        s
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    hyperparams: &'a Hyperparams,
    scenario: &'a ScenarioSpec,
    seed: u64,
    cycles: u64,
    episodes: u64,
}

/// Trains a shared policy on the Reach scenario until the cycle budget is consumed.
///
/// With a `checkpoint_dir`, parameter files with JSON sidecars and `curve.csv` are written there.
pub fn train(
    scenario: &ScenarioSpec,
    hp: &Hyperparams,
    seed: u64,
    checkpoint_dir: Option<&Path>,
    workers: usize,
) -> Result<TrainingRun, TrainError> {
    hp.validate()?;
    scenario.validate().map_err(TrainError::Invalid)?;
    if scenario.task != Task::Reach {
        return Err(TrainError::Invalid("training runs on reach scenarios".into()));
    }
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let slices = if scenario.grid.is_3d() { WINDOW as usize } else { 1 };
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = PolicyParams::<f32>::init(ArchSpec::for_env(slices, scenario.n_actions()), &mut init_rng)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(u64::MAX);
    let mut adam = Adam::new(params.data.len());
    let mut run = TrainingRun {
        params: params.clone(),
        curve: Vec::new(),
        reports: Vec::new(),
        cycles: 0,
        episodes: 0,
        checkpoints: Vec::new(),
    };
    if hp.total_cycles == 0 {
        finish(&mut run, scenario, hp, seed, checkpoint_dir)?;
        return Ok(run);
    }
    let mut collector = RolloutCollector::new(scenario, seed, hp.n_envs)?;
    let mut window: VecDeque<EpisodeEnd> = VecDeque::with_capacity(CURVE_WINDOW);
    let mut next_checkpoint = hp.checkpoint_every;
    let mut update_index = 0u64;
    while run.cycles < hp.total_cycles {
        let remaining = hp.total_cycles - run.cycles;
        let len = (remaining.div_ceil(hp.n_envs as u64) as usize).min(hp.rollout_length);
        let (rollout, ends) = collector.collect(&params, len, hp, workers)?;
        run.cycles += (len * hp.n_envs) as u64;
        for e in ends {
            if window.len() == CURVE_WINDOW {
                window.pop_front();
            }
            window.push_back(e);
            run.episodes += 1;
        }
        let clip = clip_at(hp, remaining as f64 / hp.total_cycles as f64);
        let report = update(
            &mut params,
            &mut adam,
            &rollout,
            hp,
            clip,
            &mut shuffle_rng,
            update_index,
        )?;
        update_index += 1;
        run.reports.push(report);
        if !window.is_empty() {
            let n = window.len() as f64;
            let row = CurveRow {
                cycles: run.cycles,
                mean_episode_reward: window.iter().map(|e| e.reward).sum::<f64>() / n,
                success_rate: window.iter().filter(|e| e.success).count() as f64 / n,
            };
            log::info!(
                "cycles {} reward {:.3} success {:.3} entropy {:.3} clip {:.3}",
                row.cycles,
                row.mean_episode_reward,
                row.success_rate,
                report.entropy,
                report.clip_fraction
            );
            run.curve.push(row);
        }
        if let Some(dir) = checkpoint_dir {
            if hp.checkpoint_every > 0 && run.cycles >= next_checkpoint && run.cycles < hp.total_cycles {
                let path = dir.join(format!("ckpt-{:010}.bin", run.cycles));
                write_checkpoint(&path, &params, scenario, hp, seed, run.cycles, run.episodes)?;
                run.checkpoints.push(path);
                while next_checkpoint <= run.cycles {
                    next_checkpoint += hp.checkpoint_every;
                }
            }
        }
    }
    run.params = params;
    finish(&mut run, scenario, hp, seed, checkpoint_dir)?;
    Ok(run)
}

fn finish(
    run: &mut TrainingRun,
    scenario: &ScenarioSpec,
    hp: &Hyperparams,
    seed: u64,
    dir: Option<&Path>,
) -> Result<(), TrainError> {
    let Some(dir) = dir else { return Ok(()) };
    let path = dir.join("final.bin");
    write_checkpoint(&path, &run.params, scenario, hp, seed, run.cycles, run.episodes)?;
    run.checkpoints.push(path);
    std::fs::write(dir.join("curve.csv"), run.curve_csv())?;
    Ok(())
}

fn write_checkpoint(
    path: &Path,
    params: &PolicyParams<f32>,
    scenario: &ScenarioSpec,
    hp: &Hyperparams,
    seed: u64,
    cycles: u64,
    episodes: u64,
) -> Result<(), TrainError> {
    params.save(path)?;
    let side = Sidecar {
        hyperparams: hp,
        scenario,
        seed,
        cycles,
        episodes,
    };
    let json = serde_json::to_string_pretty(&side).expect("sidecar serializes");
    std::fs::write(path.with_extension("json"), json)?;
    Ok(())
}
