//! The simulated world: grid, agents, targets, obstacles, rewards and observations.

mod grid;
mod observe;
mod place;
mod snapshot;

pub use grid::GridConfig;
pub use observe::Observation;
pub use snapshot::{short_hash, EnvDocument, RngState};

use crate::geom::{Action, Coord, Metric};
use crate::scenario::{ScenarioSpec, Task};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Observation window side length.
pub const WINDOW: i32 = 20;
/// Offset from the window corner to its center cell; the window spans −10..=+9.
pub const HALF_WINDOW: i32 = 10;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("unsatisfiable scenario: {0}")]
    Unsatisfiable(String),
    #[error("unknown agent {0}")]
    UnknownAgent(usize),
    #[error("agent {0} is dead")]
    DeadAgent(usize),
    #[error("unknown target {0}")]
    UnknownTarget(usize),
    #[error("action {0:?} is not valid on this grid")]
    InvalidAction(Action),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("episode is terminal")]
    Terminal,
    #[error("cell {0} is forbidden or outside the grid")]
    ForbiddenCell(Coord),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

/// Operator-imposed goal that suppresses automatic reassignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pin {
    Target(usize),
    Point(Coord),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: usize,
    pub position: Coord,
    pub alive: bool,
    pub assigned_target: Option<usize>,
    /// Temporary reference set by the controller (fictitious target or zone mean).
    pub waypoint: Option<Coord>,
    pub pin: Option<Pin>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub id: usize,
    pub position: Coord,
    pub seen: bool,
    pub moving: bool,
    pub escaped: bool,
}

impl Target {
    pub fn active(&self) -> bool {
        !self.seen && !self.escaped
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: usize,
    pub center: Coord,
    pub half_extent: i32,
    pub safety_margin: i32,
}

impl Obstacle {
    pub fn reach(&self) -> i32 {
        self.half_extent + self.safety_margin
    }

    /// Whether `c` lies in the footprint (body plus safety ring).
    pub fn covers(&self, c: Coord, three_d: bool) -> bool {
        let r = self.reach();
        (c.x - self.center.x).abs() <= r
            && (c.y - self.center.y).abs() <= r
            && (!three_d || (c.z - self.center.z).abs() <= r)
    }
}

/// Square area that holds one search group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Zone {
    pub x0: i32,
    pub y0: i32,
    pub side: i32,
}

impl Zone {
    pub fn contains(&self, c: Coord) -> bool {
        c.x >= self.x0 && c.x < self.x0 + self.side && c.y >= self.y0 && c.y < self.y0 + self.side
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReward {
    pub targets_reached: u32,
    pub obstacles_hit: u32,
    /// Change in distance to the reference, in cells.
    pub distance_delta: f64,
    pub total: f64,
}

impl StepReward {
    pub fn compose(targets_reached: u32, obstacles_hit: u32, distance_delta: f64, shaping_coef: f64) -> Self {
        let total = targets_reached as f64 - obstacles_hit as f64 - shaping_coef * distance_delta;
        Self {
            targets_reached,
            obstacles_hit,
            distance_delta,
            total,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: StepReward,
    /// Targets marked seen by this step.
    pub found: Vec<usize>,
    pub died: bool,
}

/// Target events produced while closing a cycle.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CycleClose {
    /// Search detections as (agent, target) pairs.
    pub detections: Vec<(usize, usize)>,
    /// Reach targets that moved onto a live agent.
    pub caught: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    AllDead,
    Escaped,
    CycleCap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub config: GridConfig,
    pub task: Task,
    pub metric: Metric,
    pub shaping: bool,
    pub shaping_coef: f64,
    pub targets_moving: bool,
    /// Search targets start moving after the first detection.
    pub targets_released: bool,
    pub seed: u64,
    pub cycle: u64,
    pub agents: Vec<Agent>,
    pub targets: Vec<Target>,
    pub obstacles: Vec<Obstacle>,
    pub zones: Vec<Zone>,
    rng: ChaCha8Rng,
    cells: Vec<f32>,
}

/// Builds a seeded environment for `scenario`.
pub fn create_environment(scenario: &ScenarioSpec, seed: u64) -> Result<EnvState, EnvError> {
    EnvState::create(scenario, seed)
}

impl EnvState {
    pub fn create(scenario: &ScenarioSpec, seed: u64) -> Result<EnvState, EnvError> {
        place::create(scenario, seed)
    }

    fn index(&self, c: Coord) -> usize {
        let w = self.config.width as usize;
        let h = self.config.height as usize;
        (c.z as usize * h + c.y as usize) * w + c.x as usize
    }

    pub fn in_grid(&self, c: Coord) -> bool {
        c.x >= 0
            && c.y >= 0
            && c.z >= 0
            && c.x < self.config.width
            && c.y < self.config.height
            && c.z < self.config.depth
    }

    /// Stored cell value; −1.0 outside the grid.
    pub fn cell(&self, c: Coord) -> f32 {
        if self.in_grid(c) {
            self.cells[self.index(c)]
        } else {
            -1.0
        }
    }

    pub fn is_forbidden(&self, c: Coord) -> bool {
        self.cell(c) < 0.0
    }

    pub fn cells(&self) -> &[f32] {
        &self.cells
    }

    /// Recomputes cell values from the border and the obstacle list.
    pub fn rebuild_cells(&mut self) {
        let cfg = self.config;
        let three_d = cfg.is_3d();
        let mut cells = vec![0.0f32; cfg.cell_count()];
        for z in 0..cfg.depth {
            let z_border = three_d && (z < cfg.margin || z >= cfg.depth - cfg.margin);
            for y in 0..cfg.height {
                let y_border = y < cfg.margin || y >= cfg.height - cfg.margin;
                for x in 0..cfg.width {
                    if z_border || y_border || x < cfg.margin || x >= cfg.width - cfg.margin {
                        cells[self.index(Coord::new(x, y, z))] = -1.0;
                    }
                }
            }
        }
        for o in &self.obstacles {
            let r = o.reach();
            let (z0, z1) = if three_d {
                (o.center.z - r, o.center.z + r)
            } else {
                (0, 0)
            };
            for z in z0.max(0)..=z1.min(cfg.depth - 1) {
                for y in (o.center.y - r).max(0)..=(o.center.y + r).min(cfg.height - 1) {
                    for x in (o.center.x - r).max(0)..=(o.center.x + r).min(cfg.width - 1) {
                        cells[self.index(Coord::new(x, y, z))] = -1.0;
                    }
                }
            }
        }
        self.cells = cells;
    }

    /// Lowest-id obstacle whose footprint contains `c`.
    pub fn obstacle_at(&self, c: Coord) -> Option<usize> {
        let three_d = self.config.is_3d();
        self.obstacles.iter().position(|o| o.covers(c, three_d))
    }

    pub fn agent(&self, id: usize) -> Result<&Agent, EnvError> {
        self.agents.get(id).ok_or(EnvError::UnknownAgent(id))
    }

    fn live_agent(&self, id: usize) -> Result<&Agent, EnvError> {
        let a = self.agent(id)?;
        if !a.alive {
            return Err(EnvError::DeadAgent(id));
        }
        Ok(a)
    }

    pub fn live_agents(&self) -> Vec<usize> {
        self.agents.iter().filter(|a| a.alive).map(|a| a.id).collect()
    }

    /// The agent's real goal: its pinned point or assigned target.
    pub fn goal(&self, id: usize) -> Option<Coord> {
        let a = self.agents.get(id)?;
        match a.pin {
            Some(Pin::Point(p)) => Some(p),
            _ => a.assigned_target.map(|t| self.targets[t].position),
        }
    }

    /// Reference used for ΔD and observations: a controller waypoint, else the goal.
    pub fn reference(&self, id: usize) -> Option<Coord> {
        let a = self.agents.get(id)?;
        a.waypoint.or_else(|| self.goal(id))
    }

    pub fn set_waypoint(&mut self, id: usize, waypoint: Option<Coord>) -> Result<(), EnvError> {
        self.agent(id)?;
        self.agents[id].waypoint = waypoint;
        Ok(())
    }

    fn active_target_at(&self, c: Coord) -> Option<usize> {
        self.targets.iter().position(|t| t.active() && t.position == c)
    }

    /// Where `action` would take agent `id`, and whether it would enter a forbidden cell.
    pub fn preview_move(&self, id: usize, action: Action) -> Result<(Coord, bool), EnvError> {
        let a = self.live_agent(id)?;
        if !action.valid_for(self.config.depth) {
            return Err(EnvError::InvalidAction(action));
        }
        Ok(self.trace_move(a.position, action, self.reference(id)))
    }

    pub(crate) fn trace_move(&self, from: Coord, action: Action, reference: Option<Coord>) -> (Coord, bool) {
        let d = action.delta();
        let axis = action.axis();
        let mut q = from;
        for _ in 0..self.config.step_cells {
            let n = q + d;
            if self.is_forbidden(n) {
                return (from, true);
            }
            q = n;
            if self.active_target_at(q).is_some() {
                break;
            }
            if reference.is_some_and(|r| r.get(axis) == q.get(axis)) {
                break;
            }
        }
        (q, false)
    }

    /// Moves one agent. Entering a forbidden cell kills it in place.
    pub fn step_agent(&mut self, id: usize, action: Action) -> Result<StepOutcome, EnvError> {
        let from = self.live_agent(id)?.position;
        if !action.valid_for(self.config.depth) {
            return Err(EnvError::InvalidAction(action));
        }
        let reference = self.reference(id);
        let (dest, hit) = self.trace_move(from, action, reference);
        if hit {
            self.agents[id].alive = false;
            return Ok(StepOutcome {
                reward: StepReward::compose(0, 1, 0.0, self.coef()),
                found: Vec::new(),
                died: true,
            });
        }
        let delta = match reference {
            Some(r) => self.metric.distance(dest, r) - self.metric.distance(from, r),
            None => 0.0,
        };
        self.agents[id].position = dest;
        let mut found = Vec::new();
        match self.task {
            Task::Reach => {
                if let Some(t) = self.active_target_at(dest) {
                    self.targets[t].seen = true;
                    found.push(t);
                }
                if matches!(self.agents[id].pin, Some(Pin::Point(p)) if p == dest) {
                    self.agents[id].pin = None;
                    self.assign_targets();
                }
            }
            Task::Search => found = self.detect_for(id),
        }
        if !found.is_empty() {
            self.on_targets_seen();
        }
        let reward = StepReward::compose(found.len() as u32, 0, delta, self.coef());
        Ok(StepOutcome {
            reward,
            found,
            died: false,
        })
    }

    fn coef(&self) -> f64 {
        if self.shaping {
            self.shaping_coef
        } else {
            0.0
        }
    }

    fn on_targets_seen(&mut self) {
        if self.task == Task::Search && self.targets_moving {
            self.targets_released = true;
        }
        self.assign_targets();
    }

    /// Whether `c` lies in the observation window centered on `center`.
    pub fn in_window(&self, center: Coord, c: Coord) -> bool {
        let inside = |d: i32| (-HALF_WINDOW..HALF_WINDOW).contains(&d);
        inside(c.x - center.x) && inside(c.y - center.y) && (!self.config.is_3d() || inside(c.z - center.z))
    }

    /// Marks every active target inside agent `id`'s window as seen.
    pub fn detect_for(&mut self, id: usize) -> Vec<usize> {
        let Some(a) = self.agents.get(id).filter(|a| a.alive) else {
            return Vec::new();
        };
        let center = a.position;
        let mut found = Vec::new();
        for t in 0..self.targets.len() {
            if self.targets[t].active() && self.in_window(center, self.targets[t].position) {
                self.targets[t].seen = true;
                found.push(t);
            }
        }
        found
    }

    /// Search-task detection pass over all live agents, as (agent, target) pairs.
    pub fn detect_all(&mut self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if self.task != Task::Search {
            return out;
        }
        for id in self.live_agents() {
            for t in self.detect_for(id) {
                out.push((id, t));
            }
        }
        if !out.is_empty() {
            self.on_targets_seen();
        }
        out
    }

    /// Advances moving targets one cell toward the bottom row.
    pub fn move_targets(&mut self) -> Vec<usize> {
        let active = self.targets_moving && (self.task == Task::Reach || self.targets_released);
        if !active {
            return Vec::new();
        }
        let bottom = self.config.height - 1;
        let mut changed = false;
        for t in self.targets.iter_mut().filter(|t| t.moving && t.active()) {
            t.position.y += 1;
            if t.position.y >= bottom {
                t.escaped = true;
            }
            changed = true;
        }
        let mut caught = Vec::new();
        if self.task == Task::Reach {
            for t in 0..self.targets.len() {
                let p = self.targets[t].position;
                if self.targets[t].active() && self.agents.iter().any(|a| a.alive && a.position == p) {
                    self.targets[t].seen = true;
                    caught.push(t);
                }
            }
        }
        if changed {
            self.assign_targets();
        }
        caught
    }

    /// Closes a cycle: moves targets, runs search detection and bumps the counter.
    pub fn end_cycle(&mut self) -> CycleClose {
        let caught = self.move_targets();
        let detections = self.detect_all();
        self.cycle += 1;
        CycleClose { detections, caught }
    }

    /// Applies one action per live agent in id order, then closes the cycle.
    pub fn advance_cycle(&mut self, actions: &[Action]) -> Result<Vec<StepReward>, EnvError> {
        let live = self.live_agents();
        if live.is_empty() || self.outcome().is_some() {
            return Err(EnvError::Terminal);
        }
        if actions.len() != live.len() {
            return Err(EnvError::ActionCount {
                expected: live.len(),
                got: actions.len(),
            });
        }
        if let Some(a) = actions.iter().find(|a| !a.valid_for(self.config.depth)) {
            return Err(EnvError::InvalidAction(*a));
        }
        let mut rewards = Vec::with_capacity(live.len());
        for (id, action) in live.into_iter().zip(actions) {
            rewards.push(self.step_agent(id, *action)?.reward);
        }
        self.end_cycle();
        Ok(rewards)
    }

    /// Greedy nearest-target assignment in agent order (Reach task).
    pub fn assign_targets(&mut self) {
        if self.task != Task::Reach {
            return;
        }
        let unseen: Vec<usize> = self.targets.iter().filter(|t| t.active()).map(|t| t.id).collect();
        let mut claimed = vec![false; self.targets.len()];
        for a in self.agents.iter_mut() {
            if let Some(Pin::Target(t)) = a.pin {
                if self.targets[t].active() {
                    a.assigned_target = Some(t);
                    if a.alive {
                        claimed[t] = true;
                    }
                } else {
                    a.pin = None;
                }
            }
        }
        for i in 0..self.agents.len() {
            let a = &self.agents[i];
            if !a.alive || matches!(a.pin, Some(Pin::Target(_))) {
                continue;
            }
            if unseen.is_empty() {
                self.agents[i].assigned_target = None;
                continue;
            }
            let mut pool: Vec<usize> = unseen.iter().copied().filter(|&t| !claimed[t]).collect();
            if pool.is_empty() {
                pool = unseen.clone();
            }
            let pos = a.position;
            let metric = self.metric;
            let mut best = pool[0];
            let mut best_d = metric.distance(pos, self.targets[best].position);
            for &t in &pool[1..] {
                let d = metric.distance(pos, self.targets[t].position);
                if d < best_d {
                    best = t;
                    best_d = d;
                }
            }
            claimed[best] = true;
            self.agents[i].assigned_target = Some(best);
        }
    }

    pub fn seen_count(&self) -> usize {
        self.targets.iter().filter(|t| t.seen).count()
    }

    pub fn escaped_count(&self) -> usize {
        self.targets.iter().filter(|t| t.escaped).count()
    }

    pub fn unseen_count(&self) -> usize {
        self.targets.iter().filter(|t| t.active()).count()
    }

    /// Terminal outcome, if any (the cycle cap is applied by the caller).
    pub fn outcome(&self) -> Option<Outcome> {
        if self.targets.iter().all(|t| t.seen) {
            Some(Outcome::Success)
        } else if self.agents.iter().all(|a| !a.alive) {
            Some(Outcome::AllDead)
        } else if self.unseen_count() == 0 {
            Some(Outcome::Escaped)
        } else {
            None
        }
    }

    /// Teleports a live agent to a free cell (operator action).
    pub fn move_agent(&mut self, id: usize, to: Coord) -> Result<(), EnvError> {
        self.live_agent(id)?;
        if self.is_forbidden(to) {
            return Err(EnvError::ForbiddenCell(to));
        }
        self.agents[id].position = to;
        if self.task == Task::Reach {
            if let Some(t) = self.active_target_at(to) {
                self.targets[t].seen = true;
                self.on_targets_seen();
            }
        } else if !self.detect_for(id).is_empty() {
            self.on_targets_seen();
        }
        Ok(())
    }

    /// Overrides an agent's goal until it is reached.
    pub fn pin_goal(&mut self, id: usize, pin: Pin) -> Result<(), EnvError> {
        self.live_agent(id)?;
        match pin {
            Pin::Target(t) => {
                let target = self.targets.get(t).ok_or(EnvError::UnknownTarget(t))?;
                if !target.active() {
                    return Err(EnvError::UnknownTarget(t));
                }
            }
            Pin::Point(p) => {
                if !self.in_grid(p) {
                    return Err(EnvError::ForbiddenCell(p));
                }
            }
        }
        self.agents[id].pin = Some(pin);
        self.assign_targets();
        Ok(())
    }
}
