use super::{ActionRecord, Brain, Controller, ControllerError, Source};
use crate::env::{EnvState, Outcome};
use crate::scenario::{ScenarioSpec, Task};
use serde::{Deserialize, Serialize};

/// Search phase a cycle is attributed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    InitialSweep,
    LocalSearch,
    PosteriorSweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleTrace {
    pub cycle: u64,
    pub records: Vec<ActionRecord>,
    pub hash: String,
}

/// Everything needed to replay and audit an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub spec: ScenarioSpec,
    pub seed: u64,
    pub initial_hash: String,
    pub cycles: Vec<CycleTrace>,
    pub outcome: Outcome,
}

impl EpisodeTrace {
    pub fn records(&self) -> impl Iterator<Item = &ActionRecord> {
        self.cycles.iter().flat_map(|c| c.records.iter())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub seed: u64,
    pub outcome: Outcome,
    pub success: bool,
    pub any_agent_hit: bool,
    pub all_agents_hit: bool,
    pub total_cycles: u64,
    /// Agent-cycles whose action came from the policy.
    pub cycles_dl: u64,
    /// Agent-cycles handled by the rule engine, holds included.
    pub cycles_rb: u64,
    pub cycles_initial_sweep: u64,
    pub cycles_rl_search: u64,
    pub cycles_posterior_sweep: u64,
    pub targets_seen: usize,
    pub targets_escaped: usize,
    pub avoidance_failures: u64,
}

impl EpisodeMetrics {
    pub fn dl_fraction(&self) -> f64 {
        let n = self.cycles_dl + self.cycles_rb;
        if n == 0 {
            0.0
        } else {
            self.cycles_dl as f64 / n as f64
        }
    }
}

/// Plays one episode to its outcome or the cycle cap.
pub fn run_episode(
    spec: &ScenarioSpec,
    seed: u64,
    brain: Brain,
) -> Result<(EpisodeTrace, EpisodeMetrics), ControllerError> {
    spec.validate().map_err(ControllerError::Spec)?;
    let mut env = EnvState::create(spec, seed)?;
    let mut ctl = Controller::start(spec, &mut env, brain)?;
    let initial_hash = env.state_hash();
    let mut cycles = Vec::new();
    let (mut dl, mut rb) = (0u64, 0u64);
    let mut phases = [0u64; 3];
    let outcome = loop {
        if let Some(o) = env.outcome() {
            break o;
        }
        if env.cycle >= spec.max_cycles {
            break Outcome::CycleCap;
        }
        let report = ctl.step_cycle(&mut env)?;
        for r in &report.records {
            match r.source {
                Source::Dl => dl += 1,
                Source::Rb => rb += 1,
            }
        }
        if spec.task == Task::Search {
            let p = if report.local_at_start || report.local_at_end {
                1
            } else if ctl.state.local_started {
                2
            } else {
                0
            };
            phases[p] += 1;
        }
        cycles.push(CycleTrace {
            cycle: env.cycle - 1,
            records: report.records,
            hash: env.state_hash(),
        });
    };
    let dead = env.agents.iter().filter(|a| !a.alive).count();
    let metrics = EpisodeMetrics {
        seed,
        outcome,
        success: outcome == Outcome::Success,
        any_agent_hit: dead > 0,
        all_agents_hit: dead == env.agents.len(),
        total_cycles: env.cycle,
        cycles_dl: dl,
        cycles_rb: rb,
        cycles_initial_sweep: phases[0],
        cycles_rl_search: phases[1],
        cycles_posterior_sweep: phases[2],
        targets_seen: env.seen_count(),
        targets_escaped: env.escaped_count(),
        avoidance_failures: ctl.state.avoidance_failures,
    };
    let trace = EpisodeTrace {
        spec: spec.clone(),
        seed,
        initial_hash,
        cycles,
        outcome,
    };
    Ok((trace, metrics))
}
