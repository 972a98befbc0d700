//! Per-agent hybrid state machine choosing between the learned policy and the rule engine.

mod episode;
pub mod oracle;
mod trace;

pub use episode::{run_episode, CycleTrace, EpisodeMetrics, EpisodeTrace, Phase};
pub use trace::{read_trace, replay_trace, write_trace, ReplayError, ReplayReport, TraceLine, TRACE_VERSION};

use crate::env::{CycleClose, EnvError, EnvState};
use crate::geom::{Action, Coord, Metric};
use crate::policy::{greedy_index, ParamsError, PolicyParams, ShapeError};
use crate::rules::{
    advance_avoidance, begin_avoidance, circle_radius, line_of_sight, partition_search_region, sweep_next_action,
    AvoidancePlan, AvoidanceStep, Coverage, History, SweepPlan, SweepStep,
};
use crate::scenario::{PolicySource, ScenarioSpec, Task};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("local search reference needs at least one find")]
    NoFinds,
    #[error("invalid scenario: {0}")]
    Spec(String),
}

/// Where DL actions come from.
#[derive(Clone, Debug)]
pub enum Brain {
    Network(Arc<PolicyParams<f32>>),
    GreedyOracle,
    RulesOnly,
}

impl Brain {
    /// Builds the brain named by a scenario, loading and checking parameters when trained.
    pub fn for_spec(spec: &ScenarioSpec, base: Option<&Path>) -> Result<Self, ControllerError> {
        match &spec.policy {
            PolicySource::Trained { path } => {
                let p = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                let slices = if spec.grid.is_3d() {
                    crate::env::WINDOW as usize
                } else {
                    1
                };
                Ok(Brain::Network(Arc::new(PolicyParams::load_for(
                    &p,
                    slices,
                    spec.n_actions(),
                )?)))
            }
            PolicySource::GreedyOracle => Ok(Brain::GreedyOracle),
            PolicySource::RulesOnly => Ok(Brain::RulesOnly),
        }
    }

    pub fn has_model(&self) -> bool {
        matches!(self, Brain::Network(_))
    }
}

/// Component-wise mean of the finds, rounded to the nearest cell with ties rounding down.
pub fn local_search_reference(finds: &[Coord]) -> Result<Coord, ControllerError> {
    if finds.is_empty() {
        return Err(ControllerError::NoFinds);
    }
    let n = finds.len() as i64;
    let mean = |f: fn(&Coord) -> i32| {
        let s: i64 = finds.iter().map(|c| f(c) as i64).sum();
        // ceil((2s - n) / 2n)
        let num = 2 * s - n;
        -((-num).div_euclid(2 * n)) as i32
    };
    Ok(Coord::new(mean(|c| c.x), mean(|c| c.y), mean(|c| c.z)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detour {
    pub plan: AvoidancePlan,
    pub resume: Coord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalState {
    pub reference: Coord,
    pub cycles_without_find: u32,
    pub finds: Vec<Coord>,
    /// Sweep to resume when the zone is exhausted.
    pub saved: SweepPlan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AgentMode {
    NormalNav,
    Avoiding {
        plan: AvoidancePlan,
    },
    ExhaustiveSearch {
        plan: SweepPlan,
        detour: Option<Detour>,
    },
    LocalSearch(LocalState),
    LocalAvoiding {
        plan: AvoidancePlan,
        goal: Coord,
        saved: LocalState,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    NormalNav,
    Avoiding,
    ExhaustiveSearch,
    LocalSearch,
    LocalAvoiding,
}

impl ModeKind {
    /// Whether a record may show a move from `self` to `to`.
    pub fn can_become(self, to: ModeKind) -> bool {
        use ModeKind::*;
        matches!(
            (self, to),
            (NormalNav, NormalNav | Avoiding)
                | (Avoiding, Avoiding | NormalNav)
                | (ExhaustiveSearch, ExhaustiveSearch | LocalSearch)
                | (LocalSearch, LocalSearch | ExhaustiveSearch | LocalAvoiding)
                | (LocalAvoiding, LocalAvoiding | LocalSearch)
        )
    }

    pub fn is_local(self) -> bool {
        matches!(self, ModeKind::LocalSearch | ModeKind::LocalAvoiding)
    }
}

impl AgentMode {
    pub fn kind(&self) -> ModeKind {
        match self {
            AgentMode::NormalNav => ModeKind::NormalNav,
            AgentMode::Avoiding { .. } => ModeKind::Avoiding,
            AgentMode::ExhaustiveSearch { .. } => ModeKind::ExhaustiveSearch,
            AgentMode::LocalSearch(_) => ModeKind::LocalSearch,
            AgentMode::LocalAvoiding { .. } => ModeKind::LocalAvoiding,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Dl,
    Rb,
}

/// One agent's action in one cycle. `action` is `None` when the agent holds position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub cycle: u64,
    pub agent: usize,
    pub mode_before: ModeKind,
    pub mode_after: ModeKind,
    pub action: Option<Action>,
    pub source: Source,
    pub reward: f64,
    pub waypoint: Option<Coord>,
    pub died: bool,
    pub state_hash: String,
}

/// Result of one controller cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleReport {
    pub records: Vec<ActionRecord>,
    pub close: CycleClose,
    pub local_at_start: bool,
    pub local_at_end: bool,
}

struct Decision {
    action: Option<Action>,
    source: Source,
    waypoint: Option<Coord>,
}

impl Decision {
    fn hold(waypoint: Option<Coord>) -> Self {
        Self {
            action: None,
            source: Source::Rb,
            waypoint,
        }
    }

    fn rb(action: Option<Action>, waypoint: Option<Coord>) -> Self {
        Self {
            action,
            source: Source::Rb,
            waypoint,
        }
    }
}

/// Controller state that travels with snapshots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub modes: Vec<AgentMode>,
    pub histories: Vec<History>,
    pub last_goals: Vec<Option<Coord>>,
    pub coverage: Option<Coverage>,
    pub local_started: bool,
    pub avoidance_failures: u64,
}

pub struct Controller {
    pub task: Task,
    pub rules: bool,
    pub metric: Metric,
    pub budget: u32,
    pub zone_side: i32,
    pub brain: Brain,
    pub state: ControllerState,
}

/// Cycles an agent may spend heading for one fictitious target.
fn waypoint_timeout(plan: &AvoidancePlan) -> u32 {
    4 * plan.circle_radius as u32
}

/// Search detection at episode start, before the first cycle.
pub fn initial_detections(state: &mut EnvState) -> Vec<(usize, usize)> {
    state.detect_all()
}

impl Controller {
    /// Sets up modes for a fresh episode and runs the initial detection pass.
    pub fn start(spec: &ScenarioSpec, state: &mut EnvState, brain: Brain) -> Result<Self, ControllerError> {
        if let Brain::Network(p) = &brain {
            let slices = if state.config.is_3d() {
                crate::env::WINDOW as usize
            } else {
                1
            };
            p.check_env(slices, spec.n_actions())?;
        }
        let n = state.agents.len();
        let (modes, coverage) = match spec.task {
            Task::Reach => (vec![AgentMode::NormalNav; n], None),
            Task::Search => {
                let regions = partition_search_region(&state.config, n);
                let modes = state
                    .agents
                    .iter()
                    .zip(&regions)
                    .map(|(a, r)| AgentMode::ExhaustiveSearch {
                        plan: SweepPlan::new(*r, spec.lane_spacing, a.position),
                        detour: None,
                    })
                    .collect();
                let mut cov = Coverage::new(&state.config);
                for a in &state.agents {
                    cov.mark_window(a.position);
                }
                (modes, Some(cov))
            }
        };
        let mut c = Self {
            task: spec.task,
            rules: spec.ablations.rules,
            metric: spec.metric(),
            budget: spec.local_search_budget,
            zone_side: spec.zone_side(),
            brain,
            state: ControllerState {
                modes,
                histories: vec![History::default(); n],
                last_goals: (0..n).map(|i| state.goal(i)).collect(),
                coverage,
                local_started: false,
                avoidance_failures: 0,
            },
        };
        for (agent, t) in initial_detections(state) {
            let p = state.targets[t].position;
            c.register_finds(agent, &[p]);
        }
        Ok(c)
    }

    /// Drops per-agent navigation memory after an operator move or retarget.
    pub fn operator_override(&mut self, env: &EnvState, id: usize) {
        self.state.histories[id].clear();
        self.state.last_goals[id] = env.goal(id);
        let mode = std::mem::replace(&mut self.state.modes[id], AgentMode::NormalNav);
        self.state.modes[id] = match mode {
            AgentMode::Avoiding { .. } => AgentMode::NormalNav,
            AgentMode::LocalAvoiding { saved, .. } => AgentMode::LocalSearch(saved),
            AgentMode::ExhaustiveSearch { plan, .. } => AgentMode::ExhaustiveSearch { plan, detour: None },
            m => m,
        };
    }

    pub fn any_local(&self) -> bool {
        self.state.modes.iter().any(|m| m.kind().is_local())
    }

    /// Runs every live agent once in id order and closes the cycle.
    pub fn step_cycle(&mut self, env: &mut EnvState) -> Result<CycleReport, ControllerError> {
        let cycle = env.cycle;
        let local_at_start = self.any_local();
        let mut records = Vec::new();
        for id in 0..env.agents.len() {
            if !env.agents[id].alive || env.outcome().is_some() {
                continue;
            }
            let mode_before = self.state.modes[id].kind();
            let d = self.decide(env, id)?;
            env.set_waypoint(id, d.waypoint)?;
            let (reward, died, found) = match d.action {
                Some(a) => {
                    let o = env.step_agent(id, a)?;
                    (o.reward.total, o.died, o.found)
                }
                None => (0.0, false, Vec::new()),
            };
            if !died {
                self.after_move(env, id, &found);
            }
            records.push(ActionRecord {
                cycle,
                agent: id,
                mode_before,
                mode_after: self.state.modes[id].kind(),
                action: d.action,
                source: d.source,
                reward,
                waypoint: d.waypoint,
                died,
                state_hash: env.state_hash(),
            });
        }
        let close = env.end_cycle();
        for &(agent, t) in &close.detections {
            let p = env.targets[t].position;
            self.register_finds(agent, &[p]);
        }
        Ok(CycleReport {
            records,
            close,
            local_at_start,
            local_at_end: self.any_local(),
        })
    }

    fn after_move(&mut self, env: &EnvState, id: usize, found: &[usize]) {
        let pos = env.agents[id].position;
        if let Some(cov) = &mut self.state.coverage {
            cov.mark_window(pos);
        }
        match self.task {
            Task::Reach => {
                if !found.is_empty() {
                    self.state.histories[id].clear();
                } else if let Some(g) = env.goal(id) {
                    self.state.histories[id].push(pos, self.metric.distance(pos, g));
                }
            }
            Task::Search => {
                let reference = match &self.state.modes[id] {
                    AgentMode::LocalSearch(ls) => Some(ls.reference),
                    AgentMode::LocalAvoiding { goal, .. } => Some(*goal),
                    _ => None,
                };
                if let Some(r) = reference {
                    self.state.histories[id].push(pos, self.metric.distance(pos, r));
                }
                let finds: Vec<Coord> = found.iter().map(|&t| env.targets[t].position).collect();
                self.register_finds(id, &finds);
            }
        }
    }

    /// Switches an agent to (or refreshes) local search after new finds.
    fn register_finds(&mut self, id: usize, finds: &[Coord]) {
        if finds.is_empty() || matches!(self.brain, Brain::RulesOnly) || self.task != Task::Search {
            return;
        }
        let mode = &mut self.state.modes[id];
        match mode {
            AgentMode::ExhaustiveSearch { plan, .. } => {
                *mode = AgentMode::LocalSearch(LocalState {
                    reference: local_search_reference(finds).expect("non-empty"),
                    cycles_without_find: 0,
                    finds: finds.to_vec(),
                    saved: plan.clone(),
                });
                self.state.histories[id].clear();
            }
            AgentMode::LocalSearch(ls) | AgentMode::LocalAvoiding { saved: ls, .. } => {
                ls.finds.extend_from_slice(finds);
                ls.reference = local_search_reference(&ls.finds).expect("non-empty");
                ls.cycles_without_find = 0;
            }
            _ => return,
        }
        self.state.local_started = true;
    }

    /// Greedy action of the trained network on the agent's current observation.
    fn network_action(&self, env: &EnvState, id: usize) -> Result<Option<Action>, ControllerError> {
        let Brain::Network(p) = &self.brain else {
            return Ok(None);
        };
        let obs = env.observation(id)?;
        let dist = p.distribution(&obs)?;
        Ok(Action::from_index(greedy_index(&dist.probs)))
    }

    fn decide(&mut self, env: &mut EnvState, id: usize) -> Result<Decision, ControllerError> {
        match self.task {
            Task::Reach => self.decide_reach(env, id),
            Task::Search => self.decide_search(env, id),
        }
    }

    fn decide_reach(&mut self, env: &mut EnvState, id: usize) -> Result<Decision, ControllerError> {
        let pos = env.agents[id].position;
        let goal = env.goal(id);
        if goal != self.state.last_goals[id] {
            self.state.last_goals[id] = goal;
            self.state.histories[id].clear();
            self.state.modes[id] = AgentMode::NormalNav;
        }
        let Some(goal) = goal else {
            return Ok(Decision::hold(None));
        };
        if let AgentMode::Avoiding { plan } = &self.state.modes[id] {
            if pos == plan.fictitious_target || plan.age > waypoint_timeout(plan) {
                match advance_avoidance(env, pos, goal, plan) {
                    AvoidanceStep::Continue(next) => self.state.modes[id] = AgentMode::Avoiding { plan: next },
                    step => {
                        if step == AvoidanceStep::Failed {
                            self.state.avoidance_failures += 1;
                        }
                        self.state.modes[id] = AgentMode::NormalNav;
                        self.state.histories[id].clear();
                    }
                }
            }
        }
        if self.rules && self.state.modes[id] == AgentMode::NormalNav && self.state.histories[id].is_stuck() {
            self.try_avoid(env, id, pos, goal);
        }
        if self.state.modes[id] == AgentMode::NormalNav {
            env.set_waypoint(id, None)?;
            let dl = match self.brain {
                Brain::Network(_) => self.network_action(env, id)?,
                Brain::GreedyOracle => oracle::greedy_move(env, pos, goal, self.metric, false),
                Brain::RulesOnly => None,
            };
            match dl {
                Some(a) if !self.rules || !env.preview_move(id, a)?.1 => {
                    return Ok(Decision {
                        action: Some(a),
                        source: Source::Dl,
                        waypoint: None,
                    })
                }
                _ => {
                    if !(self.rules && dl.is_some() && self.try_avoid(env, id, pos, goal)) {
                        let safe = oracle::greedy_move(env, pos, goal, self.metric, true);
                        return Ok(Decision::rb(safe, None));
                    }
                }
            }
        }
        let AgentMode::Avoiding { plan } = &mut self.state.modes[id] else {
            unreachable!("reach agents are either navigating or avoiding")
        };
        plan.age += 1;
        let wp = plan.fictitious_target;
        let a = oracle::greedy_move(env, pos, wp, Metric::Manhattan, true);
        Ok(Decision::rb(a, Some(wp)))
    }

    /// Enters avoidance when the straight line to `goal` is blocked. Returns whether it did.
    fn try_avoid(&mut self, env: &EnvState, id: usize, pos: Coord, goal: Coord) -> bool {
        let Some(ob) = line_of_sight(env, pos, goal) else {
            return false;
        };
        let Ok(plan) = begin_avoidance(env, pos, goal, ob) else {
            return false;
        };
        self.state.modes[id] = match std::mem::replace(&mut self.state.modes[id], AgentMode::NormalNav) {
            AgentMode::LocalSearch(saved) => AgentMode::LocalAvoiding { plan, goal, saved },
            _ => AgentMode::Avoiding { plan },
        };
        self.state.histories[id].clear();
        true
    }

    fn decide_search(&mut self, env: &mut EnvState, id: usize) -> Result<Decision, ControllerError> {
        let pos = env.agents[id].position;
        if let AgentMode::LocalSearch(ls) | AgentMode::LocalAvoiding { saved: ls, .. } = &mut self.state.modes[id] {
            ls.cycles_without_find += 1;
        }
        let was_avoiding = self.state.modes[id].kind() == ModeKind::LocalAvoiding;
        if let AgentMode::LocalAvoiding { plan, goal, saved } = &self.state.modes[id] {
            if pos == plan.fictitious_target || plan.age > waypoint_timeout(plan) {
                match advance_avoidance(env, pos, *goal, plan) {
                    AvoidanceStep::Continue(next) => {
                        let (goal, saved) = (*goal, saved.clone());
                        self.state.modes[id] = AgentMode::LocalAvoiding {
                            plan: next,
                            goal,
                            saved,
                        };
                    }
                    step => {
                        if step == AvoidanceStep::Failed {
                            self.state.avoidance_failures += 1;
                        }
                        self.state.modes[id] = AgentMode::LocalSearch(saved.clone());
                        self.state.histories[id].clear();
                    }
                }
            }
        }
        if let AgentMode::LocalSearch(ls) = &self.state.modes[id] {
            let local_goal = match self.brain {
                Brain::GreedyOracle => {
                    let cov = self.state.coverage.as_ref().expect("search coverage");
                    oracle::frontier_cell(env, cov, pos, &ls.finds, self.zone_side)
                }
                _ => Some(ls.reference),
            };
            match local_goal {
                Some(g) if ls.cycles_without_find <= self.budget => {
                    if let Some(d) = self.local_step(env, id, pos, g)? {
                        return Ok(d);
                    }
                }
                // leaving local search takes its own cycle
                _ if was_avoiding => return Ok(Decision::hold(None)),
                _ => {
                    let mut plan = ls.saved.clone();
                    plan.resume(env, self.state.coverage.as_ref().expect("search coverage"));
                    self.state.modes[id] = AgentMode::ExhaustiveSearch { plan, detour: None };
                    self.state.histories[id].clear();
                }
            }
        }
        if let AgentMode::LocalAvoiding { plan, .. } = &mut self.state.modes[id] {
            plan.age += 1;
            let wp = plan.fictitious_target;
            let a = oracle::greedy_move(env, pos, wp, Metric::Manhattan, true);
            return Ok(Decision::rb(a, Some(wp)));
        }
        self.sweep_step(env, id, pos)
    }

    /// DL move during local search, with rule substitution for fatal moves.
    /// Returns `None` when the agent switched to local avoidance instead.
    fn local_step(
        &mut self,
        env: &mut EnvState,
        id: usize,
        pos: Coord,
        goal: Coord,
    ) -> Result<Option<Decision>, ControllerError> {
        if self.rules && self.state.histories[id].is_stuck() && self.try_avoid(env, id, pos, goal) {
            return Ok(None);
        }
        env.set_waypoint(id, Some(goal))?;
        let dl = match self.brain {
            Brain::Network(_) => self.network_action(env, id)?,
            _ => oracle::step_toward(pos, goal),
        };
        let Some(a) = dl else {
            return Ok(Some(Decision::hold(Some(goal))));
        };
        if self.rules && env.preview_move(id, a)?.1 {
            if self.try_avoid(env, id, pos, goal) {
                return Ok(None);
            }
            let safe = oracle::greedy_move(env, pos, goal, Metric::Manhattan, true);
            return Ok(Some(Decision::rb(safe, Some(goal))));
        }
        Ok(Some(Decision {
            action: Some(a),
            source: Source::Dl,
            waypoint: Some(goal),
        }))
    }

    fn sweep_step(&mut self, env: &EnvState, id: usize, pos: Coord) -> Result<Decision, ControllerError> {
        let AgentMode::ExhaustiveSearch { plan, detour } = &mut self.state.modes[id] else {
            unreachable!("search agents sweep when not local")
        };
        for _ in 0..plan.lane_x.len() + 4 {
            if let Some(d) = detour {
                if pos == d.plan.fictitious_target || d.plan.age > waypoint_timeout(&d.plan) {
                    match advance_avoidance(env, pos, d.resume, &d.plan) {
                        AvoidanceStep::Continue(next) => d.plan = next,
                        AvoidanceStep::Finished => {
                            *detour = None;
                            continue;
                        }
                        AvoidanceStep::Failed => {
                            self.state.avoidance_failures += 1;
                            plan.skip_lane();
                            *detour = None;
                            continue;
                        }
                    }
                }
                d.plan.age += 1;
                let wp = d.plan.fictitious_target;
                let a = oracle::greedy_move(env, pos, wp, Metric::Manhattan, true);
                return Ok(Decision::rb(a, Some(wp)));
            }
            match sweep_next_action(env, pos, plan) {
                SweepStep::Move(a) => return Ok(Decision::rb(Some(a), None)),
                SweepStep::Hold => return Ok(Decision::hold(None)),
                SweepStep::Blocked {
                    obstacle: Some(ob),
                    resume,
                } if self.rules => match begin_avoidance(env, pos, resume, ob) {
                    Ok(p) => *detour = Some(Detour { plan: p, resume }),
                    Err(_) => plan.skip_lane(),
                },
                SweepStep::Blocked { .. } => plan.skip_lane(),
            }
        }
        Ok(Decision::hold(None))
    }
}

/// Radius used for fictitious-target circles around an obstacle of the given size.
pub fn avoidance_radius(half_extent: i32, safety_margin: i32) -> i32 {
    circle_radius(half_extent, safety_margin)
}
