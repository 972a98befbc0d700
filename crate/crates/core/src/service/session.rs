use crate::controller::{Brain, Controller, ControllerError, ControllerState, ModeKind};
use crate::env::{EnvError, EnvState, Outcome, Pin};
use crate::explain::{lime_explain, shap_explain, ContributionMap, Method, PerturbationScheme};
use crate::geom::Coord;
use crate::scenario::ScenarioSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Paused,
    Terminal,
}

/// Target of a retarget command: a target id or a free grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRef {
    Target(usize),
    Point(Coord),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    Pause,
    Resume,
    Step {
        n: u64,
    },
    SaveState {
        label: String,
    },
    Rewind {
        index: usize,
    },
    ForwardTo {
        index: usize,
    },
    MoveAgent {
        agent: usize,
        to: Coord,
    },
    SetAgentTarget {
        agent: usize,
        target: TargetRef,
    },
    Explain {
        agent: usize,
        method: Method,
        #[serde(default)]
        samples: Option<usize>,
    },
    GetInfo,
}

impl Command {
    fn allowed_while_running(&self) -> bool {
        matches!(self, Command::Pause | Command::Resume | Command::GetInfo)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectCode {
    NotPaused,
    Terminal,
    OutOfRange,
    UnknownAgent,
    DeadAgent,
    UnknownTarget,
    Forbidden,
    NoModel,
    RuleControlled,
    Invalid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub code: RejectCode,
    pub message: String,
}

impl Rejection {
    pub fn new(code: RejectCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<EnvError> for Rejection {
    fn from(e: EnvError) -> Self {
        let code = match e {
            EnvError::UnknownAgent(_) => RejectCode::UnknownAgent,
            EnvError::DeadAgent(_) => RejectCode::DeadAgent,
            EnvError::UnknownTarget(_) => RejectCode::UnknownTarget,
            EnvError::ForbiddenCell(_) => RejectCode::Forbidden,
            EnvError::Terminal => RejectCode::Terminal,
            _ => RejectCode::Invalid,
        };
        Rejection::new(code, e.to_string())
    }
}

impl From<ControllerError> for Rejection {
    fn from(e: ControllerError) -> Self {
        match e {
            ControllerError::Env(e) => e.into(),
            e => Rejection::new(RejectCode::Invalid, e.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub id: usize,
    pub position: Coord,
    pub alive: bool,
    pub mode: ModeKind,
    pub target: Option<usize>,
    pub goal: Option<Coord>,
    pub waypoint: Option<Coord>,
    pub pinned: bool,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetView {
    pub id: usize,
    pub position: Coord,
    pub seen: bool,
    pub escaped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleView {
    pub center: Coord,
    pub half_extent: i32,
}

/// Scene state after a cycle or operator edit. Obstacles are sent only on full frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub cycle: u64,
    pub run_state: RunState,
    pub hash: String,
    pub agents: Vec<AgentView>,
    pub targets: Vec<TargetView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacles: Option<Vec<ObstacleView>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedInfo {
    pub index: usize,
    pub label: String,
    pub cycle: u64,
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Info {
    pub cycle: u64,
    pub run_state: RunState,
    pub hash: String,
    pub agents: Vec<AgentView>,
    pub saved: Vec<SavedInfo>,
    pub outcome: Option<Outcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub agent: usize,
    pub cycle: u64,
    pub center: Coord,
    pub map: ContributionMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    SceneDelta(Scene),
    StateSaved(SavedInfo),
    ExplanationReady(Box<Explanation>),
    Info(Info),
    Terminal { cycle: u64, outcome: Outcome },
}

/// Successful acknowledgment payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Accepted {
    Done {
        run_state: RunState,
        cycle: u64,
    },
    Stepped {
        cycles: u64,
        cycle: u64,
        outcome: Option<Outcome>,
    },
    Saved(SavedInfo),
    Restored(SavedInfo),
    Explained {
        method: Method,
        fidelity: Vec<f64>,
    },
    Info(Info),
}

#[derive(Clone, Debug)]
struct Saved {
    label: String,
    cycle: u64,
    hash: String,
    env: Vec<u8>,
    controller: ControllerState,
    scores: Vec<f64>,
    outcome: Option<Outcome>,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid scenario: {0}")]
    Spec(String),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// One simulation under operator control. All methods run on the session's executor.
pub struct Session {
    pub spec: ScenarioSpec,
    pub seed: u64,
    env: EnvState,
    controller: Controller,
    run_state: RunState,
    outcome: Option<Outcome>,
    scores: Vec<f64>,
    saved: Vec<Saved>,
}

impl Session {
    pub fn create(spec: ScenarioSpec, seed: u64, base_dir: Option<&Path>) -> Result<(Self, Vec<Event>), SessionError> {
        spec.validate().map_err(SessionError::Spec)?;
        let brain = Brain::for_spec(&spec, base_dir)?;
        let mut env = EnvState::create(&spec, seed)?;
        let controller = Controller::start(&spec, &mut env, brain)?;
        let n = env.agents.len();
        let mut s = Self {
            spec,
            seed,
            env,
            controller,
            run_state: RunState::Paused,
            outcome: None,
            scores: vec![0.0; n],
            saved: Vec::new(),
        };
        s.check_terminal();
        let events = vec![Event::SceneDelta(s.scene(true))];
        Ok((s, events))
    }

    pub fn run_state(&self) -> RunState {
        self.run_state
    }

    pub fn cycle(&self) -> u64 {
        self.env.cycle
    }

    pub fn state_hash(&self) -> String {
        self.env.state_hash()
    }

    pub fn env(&self) -> &EnvState {
        &self.env
    }

    pub fn saved_count(&self) -> usize {
        self.saved.len()
    }

    /// Environment binary of a saved state.
    pub fn snapshot_bytes(&self, index: usize) -> Option<&[u8]> {
        self.saved.get(index).map(|s| s.env.as_slice())
    }

    /// Appends an externally produced environment snapshot as a saved state.
    pub fn import_snapshot(&mut self, label: String, bytes: &[u8]) -> Result<(SavedInfo, Vec<Event>), Rejection> {
        let mut env = EnvState::decode(bytes).map_err(Rejection::from)?;
        if env.agents.len() != self.env.agents.len() || env.config != self.env.config || env.task != self.env.task {
            return Err(Rejection::new(
                RejectCode::Invalid,
                "snapshot does not match the session scenario",
            ));
        }
        let probe = Controller::start(&self.spec, &mut env.clone(), self.controller.brain.clone())?;
        env.rebuild_cells();
        let outcome = env
            .outcome()
            .or((env.cycle >= self.spec.max_cycles).then_some(Outcome::CycleCap));
        let saved = Saved {
            label,
            cycle: env.cycle,
            hash: env.state_hash(),
            env: env.encode(),
            controller: probe.state,
            scores: vec![0.0; env.agents.len()],
            outcome,
        };
        self.saved.push(saved);
        let info = self.saved_info(self.saved.len() - 1);
        Ok((info.clone(), vec![Event::StateSaved(info)]))
    }

    fn saved_info(&self, index: usize) -> SavedInfo {
        let s = &self.saved[index];
        SavedInfo {
            index,
            label: s.label.clone(),
            cycle: s.cycle,
            hash: s.hash.clone(),
        }
    }

    pub fn scene(&self, full: bool) -> Scene {
        Scene {
            cycle: self.env.cycle,
            run_state: self.run_state,
            hash: self.env.state_hash(),
            agents: self.agent_views(),
            targets: self
                .env
                .targets
                .iter()
                .map(|t| TargetView {
                    id: t.id,
                    position: t.position,
                    seen: t.seen,
                    escaped: t.escaped,
                })
                .collect(),
            obstacles: full.then(|| {
                self.env
                    .obstacles
                    .iter()
                    .map(|o| ObstacleView {
                        center: o.center,
                        half_extent: o.half_extent,
                    })
                    .collect()
            }),
        }
    }

    fn agent_views(&self) -> Vec<AgentView> {
        self.env
            .agents
            .iter()
            .map(|a| AgentView {
                id: a.id,
                position: a.position,
                alive: a.alive,
                mode: self.controller.state.modes[a.id].kind(),
                target: a.assigned_target,
                goal: self.env.goal(a.id),
                waypoint: a.waypoint,
                pinned: a.pin.is_some(),
                score: self.scores[a.id],
            })
            .collect()
    }

    pub fn info(&self) -> Info {
        Info {
            cycle: self.env.cycle,
            run_state: self.run_state,
            hash: self.env.state_hash(),
            agents: self.agent_views(),
            saved: (0..self.saved.len()).map(|i| self.saved_info(i)).collect(),
            outcome: self.outcome,
        }
    }

    fn check_terminal(&mut self) -> Option<Outcome> {
        let o = self
            .env
            .outcome()
            .or((self.env.cycle >= self.spec.max_cycles).then_some(Outcome::CycleCap));
        if o.is_some() {
            self.outcome = o;
            self.run_state = RunState::Terminal;
        }
        o
    }

    /// Advances one cycle. Returns the delta and, when the episode ends, the terminal event.
    fn advance(&mut self) -> Result<Vec<Event>, Rejection> {
        let report = self.controller.step_cycle(&mut self.env)?;
        for r in &report.records {
            self.scores[r.agent] += r.reward;
        }
        let mut events = Vec::with_capacity(2);
        let terminal = self.check_terminal();
        events.push(Event::SceneDelta(self.scene(false)));
        if let Some(outcome) = terminal {
            events.push(Event::Terminal {
                cycle: self.env.cycle,
                outcome,
            });
        }
        Ok(events)
    }

    /// One tick of the running clock; a no-op unless Running.
    pub fn tick(&mut self) -> Vec<Event> {
        if self.run_state != RunState::Running {
            return Vec::new();
        }
        match self.advance() {
            Ok(ev) => ev,
            Err(e) => {
                log::error!("session tick failed: {}", e.message);
                self.run_state = RunState::Paused;
                vec![Event::Info(self.info())]
            }
        }
    }

    fn require_live(&self, agent: usize) -> Result<(), Rejection> {
        let a = self
            .env
            .agents
            .get(agent)
            .ok_or_else(|| Rejection::new(RejectCode::UnknownAgent, format!("unknown agent {agent}")))?;
        if !a.alive {
            return Err(Rejection::new(RejectCode::DeadAgent, format!("agent {agent} is dead")));
        }
        Ok(())
    }

    fn require_open(&self) -> Result<(), Rejection> {
        if self.run_state == RunState::Terminal {
            return Err(Rejection::new(RejectCode::Terminal, "episode has ended"));
        }
        Ok(())
    }

    fn done(&self) -> Accepted {
        Accepted::Done {
            run_state: self.run_state,
            cycle: self.env.cycle,
        }
    }

    fn restore(&mut self, index: usize) -> Result<(Accepted, Vec<Event>), Rejection> {
        let s = self.saved.get(index).ok_or_else(|| {
            Rejection::new(
                RejectCode::OutOfRange,
                format!("no saved state {index}; {} stored", self.saved.len()),
            )
        })?;
        let env = EnvState::decode(&s.env).map_err(Rejection::from)?;
        let (controller, scores, outcome) = (s.controller.clone(), s.scores.clone(), s.outcome);
        self.env = env;
        self.controller.state = controller;
        self.scores = scores;
        self.outcome = outcome;
        self.run_state = if outcome.is_some() {
            RunState::Terminal
        } else {
            RunState::Paused
        };
        let info = self.saved_info(index);
        debug_assert_eq!(info.hash, self.env.state_hash());
        Ok((Accepted::Restored(info), vec![Event::SceneDelta(self.scene(true))]))
    }

    /// Applies one command; exactly one acknowledgment is produced per call.
    pub fn apply(&mut self, cmd: Command) -> (Result<Accepted, Rejection>, Vec<Event>) {
        match self.apply_inner(cmd) {
            Ok((a, ev)) => (Ok(a), ev),
            Err(r) => (Err(r), Vec::new()),
        }
    }

    fn apply_inner(&mut self, cmd: Command) -> Result<(Accepted, Vec<Event>), Rejection> {
        if self.run_state == RunState::Running && !cmd.allowed_while_running() {
            return Err(Rejection::new(RejectCode::NotPaused, "pause the session first"));
        }
        match cmd {
            Command::Pause => {
                if self.run_state == RunState::Running {
                    self.run_state = RunState::Paused;
                }
                Ok((self.done(), vec![Event::Info(self.info())]))
            }
            Command::Resume => {
                self.require_open()?;
                self.run_state = RunState::Running;
                Ok((self.done(), vec![Event::Info(self.info())]))
            }
            Command::GetInfo => {
                let info = self.info();
                Ok((Accepted::Info(info.clone()), vec![Event::Info(info)]))
            }
            Command::Step { n } => {
                if n > 0 {
                    self.require_open()?;
                }
                let mut events = Vec::new();
                let mut done = 0;
                while done < n && self.run_state != RunState::Terminal {
                    events.extend(self.advance()?);
                    done += 1;
                }
                Ok((
                    Accepted::Stepped {
                        cycles: done,
                        cycle: self.env.cycle,
                        outcome: self.outcome,
                    },
                    events,
                ))
            }
            Command::SaveState { label } => {
                self.saved.push(Saved {
                    label,
                    cycle: self.env.cycle,
                    hash: self.env.state_hash(),
                    env: self.env.encode(),
                    controller: self.controller.state.clone(),
                    scores: self.scores.clone(),
                    outcome: self.outcome,
                });
                let info = self.saved_info(self.saved.len() - 1);
                Ok((Accepted::Saved(info.clone()), vec![Event::StateSaved(info)]))
            }
            Command::Rewind { index } | Command::ForwardTo { index } => self.restore(index),
            Command::MoveAgent { agent, to } => {
                self.require_open()?;
                self.require_live(agent)?;
                if !self.env.in_grid(to) || self.env.is_forbidden(to) {
                    return Err(Rejection::new(RejectCode::Forbidden, format!("cell {to} is forbidden")));
                }
                self.env.move_agent(agent, to)?;
                self.controller.operator_override(&self.env, agent);
                self.check_terminal();
                Ok((self.done(), self.edit_events()))
            }
            Command::SetAgentTarget { agent, target } => {
                self.require_open()?;
                self.require_live(agent)?;
                let pin = match target {
                    TargetRef::Target(t) => Pin::Target(t),
                    TargetRef::Point(p) => Pin::Point(p),
                };
                self.env.pin_goal(agent, pin)?;
                self.controller.operator_override(&self.env, agent);
                Ok((self.done(), self.edit_events()))
            }
            Command::Explain { agent, method, samples } => {
                self.require_live(agent)?;
                let Brain::Network(params) = &self.controller.brain else {
                    return Err(Rejection::new(RejectCode::NoModel, "no model"));
                };
                let mode = self.controller.state.modes[agent].kind();
                if !matches!(mode, ModeKind::NormalNav | ModeKind::LocalSearch) {
                    return Err(Rejection::new(
                        RejectCode::RuleControlled,
                        format!("agent {agent} is under rule control ({mode:?})"),
                    ));
                }
                let obs = self.env.observation(agent).map_err(Rejection::from)?;
                let mut scheme = PerturbationScheme::new(obs.slices);
                if let Some(n) = samples {
                    scheme.n_samples = n;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (self.env.cycle << 16) ^ agent as u64);
                let map = match method {
                    Method::Lime => lime_explain(params.as_ref(), &obs.values, &scheme, &mut rng),
                    Method::Shap => shap_explain(params.as_ref(), &obs.values, &scheme, &mut rng),
                }
                .map_err(|e| Rejection::new(RejectCode::Invalid, e.to_string()))?;
                let fidelity = map.fidelity.clone();
                let ex = Explanation {
                    agent,
                    cycle: self.env.cycle,
                    center: obs.center,
                    map,
                };
                Ok((
                    Accepted::Explained { method, fidelity },
                    vec![Event::ExplanationReady(Box::new(ex))],
                ))
            }
        }
    }

    fn edit_events(&self) -> Vec<Event> {
        let mut ev = vec![Event::SceneDelta(self.scene(false)), Event::Info(self.info())];
        if let Some(outcome) = self.outcome {
            ev.push(Event::Terminal {
                cycle: self.env.cycle,
                outcome,
            });
        }
        ev
    }
}
