//! Experiment execution over seeded test sets and metric aggregation into report tables.

mod emit;

pub use emit::{emit_report, emit_series, render_report, render_series, render_series_svg, ReportFormat};

use crate::controller::{run_episode, Brain, ControllerError, EpisodeMetrics, EpisodeTrace};
use crate::env::{EnvError, EnvState, Zone};
use crate::geom::Coord;
use crate::scenario::{PolicySource, ScenarioSpec, Task};
use crate::trainer::TRAIN_SEED_BASE;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("report has no episodes")]
    Empty,
    #[error("seeds {0}..{1} overlap the training seed range")]
    Seeds(u64, u64),
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Column layout of a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFamily {
    /// Reach without obstacles: training cycles, cycle cap, success.
    Completion,
    /// Reach with obstacles: DL/RB split, success and hit rates.
    Obstacles,
    /// Search: sweep and local-search cycle phases.
    Search,
}

impl TableFamily {
    pub fn for_spec(spec: &ScenarioSpec) -> Self {
        match (spec.task, spec.n_obstacles) {
            (Task::Search, _) => TableFamily::Search,
            (Task::Reach, 0) => TableFamily::Completion,
            (Task::Reach, _) => TableFamily::Obstacles,
        }
    }
}

/// Means of the search phases over a set of episodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseMeans {
    pub initial_sweep: f64,
    pub rl_search: f64,
    pub posterior_sweep: f64,
    pub total: f64,
}

impl PhaseMeans {
    fn of<'a>(eps: impl Iterator<Item = &'a EpisodeMetrics>) -> Option<Self> {
        let mut m = PhaseMeans::default();
        let mut n = 0usize;
        for e in eps {
            m.initial_sweep += e.cycles_initial_sweep as f64;
            m.rl_search += e.cycles_rl_search as f64;
            m.posterior_sweep += e.cycles_posterior_sweep as f64;
            m.total += e.total_cycles as f64;
            n += 1;
        }
        (n > 0).then(|| {
            let n = n as f64;
            PhaseMeans {
                initial_sweep: m.initial_sweep / n,
                rl_search: m.rl_search / n,
                posterior_sweep: m.posterior_sweep / n,
                total: m.total / n,
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: u32,
    pub family: TableFamily,
    pub spec: ScenarioSpec,
    pub n_episodes: usize,
    pub base_seed: u64,
    /// Training cycles recorded next to a trained parameter file, if any.
    pub training_cycles: Option<u64>,
    pub success_rate: f64,
    pub any_hit_rate: f64,
    pub all_hit_rate: f64,
    /// Pooled over all agent-cycles of all episodes.
    pub dl_percent: f64,
    pub rb_percent: f64,
    pub mean_total_cycles: f64,
    /// Phase means over all episodes.
    pub phases_all: PhaseMeans,
    /// Phase means over successful episodes only; absent when none succeeded.
    pub phases_success: Option<PhaseMeans>,
    pub max_total_cycles: u64,
    pub mean_targets_seen: f64,
    pub episodes: Vec<EpisodeMetrics>,
}

impl ExperimentReport {
    /// Aggregates episodes listed in seed order.
    pub fn aggregate(spec: &ScenarioSpec, base_seed: u64, episodes: Vec<EpisodeMetrics>) -> Result<Self, EvalError> {
        if episodes.is_empty() {
            return Err(EvalError::Empty);
        }
        let n = episodes.len() as f64;
        let pct = |f: &dyn Fn(&EpisodeMetrics) -> bool| 100.0 * episodes.iter().filter(|e| f(e)).count() as f64 / n;
        let dl: u64 = episodes.iter().map(|e| e.cycles_dl).sum();
        let rb: u64 = episodes.iter().map(|e| e.cycles_rb).sum();
        let agent_cycles = (dl + rb).max(1) as f64;
        let phases_all = PhaseMeans::of(episodes.iter()).expect("non-empty");
        Ok(Self {
            version: REPORT_VERSION,
            family: TableFamily::for_spec(spec),
            spec: spec.clone(),
            n_episodes: episodes.len(),
            base_seed,
            training_cycles: None,
            success_rate: pct(&|e| e.success),
            any_hit_rate: pct(&|e| e.any_agent_hit),
            all_hit_rate: pct(&|e| e.all_agents_hit),
            dl_percent: 100.0 * dl as f64 / agent_cycles,
            rb_percent: 100.0 * rb as f64 / agent_cycles,
            mean_total_cycles: phases_all.total,
            phases_all,
            phases_success: PhaseMeans::of(episodes.iter().filter(|e| e.success)),
            max_total_cycles: episodes.iter().map(|e| e.total_cycles).max().unwrap_or(0),
            mean_targets_seen: episodes.iter().map(|e| e.targets_seen as f64).sum::<f64>() / n,
            episodes,
        })
    }

    pub fn seeds(&self) -> std::ops::Range<u64> {
        self.base_seed..self.base_seed + self.n_episodes as u64
    }
}

/// Zones and target positions of a search scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchLayout {
    pub zones: Vec<Zone>,
    pub targets: Vec<Coord>,
}

pub fn generate_search_layout(spec: &ScenarioSpec, seed: u64) -> Result<SearchLayout, EvalError> {
    if spec.task != Task::Search {
        return Err(EvalError::Invalid("search layouts need a search scenario".into()));
    }
    let env = EnvState::create(spec, seed)?;
    Ok(SearchLayout {
        zones: env.zones.clone(),
        targets: env.targets.iter().map(|t| t.position).collect(),
    })
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions<'a> {
    pub workers: usize,
    /// Directory that relative parameter paths are resolved against.
    pub base_dir: Option<&'a Path>,
    pub keep_traces: bool,
}

fn training_cycles(spec: &ScenarioSpec, base: Option<&Path>) -> Option<u64> {
    let PolicySource::Trained { path } = &spec.policy else {
        return None;
    };
    let p = match base {
        Some(b) if path.is_relative() => b.join(path),
        _ => path.clone(),
    };
    let text = std::fs::read_to_string(p.with_extension("json")).ok()?;
    serde_json::from_str::<serde_json::Value>(&text).ok()?["cycles"].as_u64()
}

/// Runs seeds `base_seed..base_seed+n` and aggregates them in seed order.
pub fn run_experiment(spec: &ScenarioSpec, n_episodes: usize, base_seed: u64) -> Result<ExperimentReport, EvalError> {
    Ok(run_experiment_with(spec, n_episodes, base_seed, &EvalOptions::default())?.0)
}

type EpisodeResult = Result<(EpisodeTrace, EpisodeMetrics), ControllerError>;

pub fn run_experiment_with(
    spec: &ScenarioSpec,
    n_episodes: usize,
    base_seed: u64,
    opts: &EvalOptions<'_>,
) -> Result<(ExperimentReport, Vec<EpisodeTrace>), EvalError> {
    if n_episodes == 0 {
        return Err(EvalError::Empty);
    }
    let end = base_seed.saturating_add(n_episodes as u64);
    if end > TRAIN_SEED_BASE {
        return Err(EvalError::Seeds(base_seed, end));
    }
    spec.validate().map_err(EvalError::Invalid)?;
    let brain = Brain::for_spec(spec, opts.base_dir)?;
    let workers = opts.workers.clamp(1, n_episodes);
    let run = |i: usize| run_episode(spec, base_seed + i as u64, brain.clone());
    let mut slots: Vec<Option<EpisodeResult>> = (0..n_episodes).map(|_| None).collect();
    if workers == 1 {
        for (i, s) in slots.iter_mut().enumerate() {
            *s = Some(run(i));
        }
    } else {
        let results: Vec<Vec<(usize, EpisodeResult)>> = std::thread::scope(|sc| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let run = &run;
                    sc.spawn(move || {
                        (w..n_episodes)
                            .step_by(workers)
                            .map(|i| (i, run(i)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        for (i, r) in results.into_iter().flatten() {
            slots[i] = Some(r);
        }
    }
    let mut metrics = Vec::with_capacity(n_episodes);
    let mut traces = Vec::new();
    for s in slots {
        let (t, m) = s.expect("every seed ran")?;
        metrics.push(m);
        if opts.keep_traces {
            traces.push(t);
        }
    }
    let mut report = ExperimentReport::aggregate(spec, base_seed, metrics)?;
    report.training_cycles = training_cycles(spec, opts.base_dir);
    Ok((report, traces))
}

/// One report per obstacle count, same seeds for each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSeries {
    pub version: u32,
    pub counts: Vec<usize>,
    pub reports: Vec<ExperimentReport>,
}

impl SweepSeries {
    pub fn success_rates(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.success_rate).collect()
    }

    pub fn any_hit_rates(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.any_hit_rate).collect()
    }
}

pub fn obstacle_sweep_experiment(
    spec: &ScenarioSpec,
    counts: &[usize],
    n_episodes: usize,
    base_seed: u64,
    opts: &EvalOptions<'_>,
) -> Result<SweepSeries, EvalError> {
    if spec.task != Task::Reach {
        return Err(EvalError::Invalid("obstacle sweeps run on reach scenarios".into()));
    }
    let mut reports = Vec::with_capacity(counts.len());
    for &c in counts {
        let s = ScenarioSpec {
            n_obstacles: c,
            ..spec.clone()
        };
        let opts = EvalOptions {
            keep_traces: false,
            ..opts.clone()
        };
        reports.push(run_experiment_with(&s, n_episodes, base_seed, &opts)?.0);
    }
    Ok(SweepSeries {
        version: REPORT_VERSION,
        counts: counts.to_vec(),
        reports,
    })
}

#[cfg(test)]
mod tests;
