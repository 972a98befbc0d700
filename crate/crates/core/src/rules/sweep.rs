use crate::env::{EnvState, GridConfig, HALF_WINDOW};
use crate::geom::{Action, Coord};
use serde::{Deserialize, Serialize};

/// Inclusive cell rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl Rect {
    pub fn width(&self) -> i32 {
        self.x1 - self.x0 + 1
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.x >= self.x0 && c.x <= self.x1 && c.y >= self.y0 && c.y <= self.y1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heading {
    /// Increasing y.
    Down,
    Up,
}

impl Heading {
    pub fn flip(self) -> Heading {
        match self {
            Heading::Down => Heading::Up,
            Heading::Up => Heading::Down,
        }
    }

    fn sign(self) -> i32 {
        match self {
            Heading::Down => 1,
            Heading::Up => -1,
        }
    }
}

/// Splits the non-margin area into vertical strips of near-equal width, wider strips first.
pub fn partition_search_region(grid: &GridConfig, n_agents: usize) -> Vec<Rect> {
    let n = n_agents.max(1) as i32;
    let x0 = grid.margin;
    let inner = grid.width - 2 * grid.margin;
    let (base, extra) = (inner / n, inner % n);
    let mut out = Vec::with_capacity(n as usize);
    let mut x = x0;
    for i in 0..n {
        let w = base + i32::from(i < extra);
        out.push(Rect {
            x0: x,
            y0: grid.margin,
            x1: x + w - 1,
            y1: grid.height - grid.margin - 1,
        });
        x += w;
    }
    out
}

/// Lane abscissas covering `region` with windows; the last lane is pulled in to the right edge.
pub fn plan_lanes(region: &Rect, spacing: i32) -> Vec<i32> {
    let mut lanes = Vec::new();
    let right_reach = HALF_WINDOW - 1;
    let mut x = region.x0 + HALF_WINDOW;
    loop {
        let lane = if x + right_reach <= region.x1 {
            x
        } else {
            (region.x1 - right_reach).max(region.x0)
        };
        if lanes.last() != Some(&lane) {
            lanes.push(lane.min(region.x1));
        }
        if x + right_reach >= region.x1 {
            break;
        }
        x += spacing;
    }
    lanes
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub lane_x: Vec<i32>,
    pub lane_index: usize,
    /// Heading of lane 0; later lanes alternate.
    pub first_heading: Heading,
    pub region: Rect,
    /// Point to reach before continuing along the current lane.
    pub approach: Option<Coord>,
    pub complete: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepStep {
    Move(Action),
    /// The next cell is forbidden; go around and continue from `resume`.
    Blocked {
        obstacle: Option<usize>,
        resume: Coord,
    },
    Hold,
}

impl SweepPlan {
    pub fn new(region: Rect, spacing: i32, start: Coord) -> Self {
        let lane_x = plan_lanes(&region, spacing);
        let first_heading = if (start.y - region.y0).abs() <= (start.y - region.y1).abs() {
            Heading::Down
        } else {
            Heading::Up
        };
        let mut plan = Self {
            lane_x,
            lane_index: 0,
            first_heading,
            region,
            approach: None,
            complete: false,
        };
        plan.approach = Some(Coord::xy(plan.lane_x[0], plan.lane_start(0)));
        plan
    }

    pub fn heading(&self, lane: usize) -> Heading {
        if lane % 2 == 0 {
            self.first_heading
        } else {
            self.first_heading.flip()
        }
    }

    fn lane_start(&self, lane: usize) -> i32 {
        match self.heading(lane) {
            Heading::Down => self.region.y0,
            Heading::Up => self.region.y1,
        }
    }

    fn lane_end(&self, lane: usize) -> i32 {
        match self.heading(lane) {
            Heading::Down => self.region.y1,
            Heading::Up => self.region.y0,
        }
    }

    /// Plan points of one lane in travel order.
    pub fn lane_points(&self, lane: usize) -> Vec<Coord> {
        let x = self.lane_x[lane];
        let (a, b) = (self.lane_start(lane), self.lane_end(lane));
        let s = self.heading(lane).sign();
        let n = (b - a).abs() + 1;
        (0..n).map(|k| Coord::xy(x, a + s * k)).collect()
    }

    /// Moves on to the lane after the current one.
    pub fn skip_lane(&mut self) {
        self.approach = None;
        self.lane_index += 1;
        if self.lane_index >= self.lane_x.len() {
            self.complete = true;
        }
    }

    /// Restarts at the first plan point whose window still holds unswept cells.
    pub fn resume(&mut self, state: &EnvState, coverage: &Coverage) {
        for lane in 0..self.lane_x.len() {
            for p in self.lane_points(lane) {
                if !state.is_forbidden(p) && coverage.window_has_unswept(state, p) {
                    self.lane_index = lane;
                    self.approach = Some(p);
                    self.complete = false;
                    return;
                }
            }
        }
        self.complete = true;
        self.approach = None;
    }
}

/// Unit step toward `to` on the axis with the larger displacement, falling back to the other axis.
fn step_toward(state: &EnvState, pos: Coord, to: Coord) -> Result<Action, Option<usize>> {
    let dx = to.x - pos.x;
    let dy = to.y - pos.y;
    let mut options = Vec::with_capacity(2);
    let hx = (dx != 0).then(|| Action::along(0, dx));
    let vy = (dy != 0).then(|| Action::along(1, dy));
    if dx.abs() >= dy.abs() {
        options.extend(hx);
        options.extend(vy);
    } else {
        options.extend(vy);
        options.extend(hx);
    }
    let mut blocker = None;
    for a in options {
        let next = pos + a.delta();
        if !state.is_forbidden(next) {
            return Ok(a);
        }
        if blocker.is_none() {
            blocker = Some(state.obstacle_at(next));
        }
    }
    Err(blocker.flatten())
}

/// First free lane cell at or beyond `from_y` in the lane's heading, inside the region.
fn free_lane_cell(state: &EnvState, plan: &SweepPlan, lane: usize, from_y: i32) -> Option<Coord> {
    let x = plan.lane_x[lane];
    let s = plan.heading(lane).sign();
    let end = plan.lane_end(lane);
    let mut y = from_y;
    while (end - y) * s >= 0 {
        let c = Coord::xy(x, y);
        if !state.is_forbidden(c) {
            return Some(c);
        }
        y += s;
    }
    None
}

/// Next boustrophedon move for an agent at `pos`.
pub fn sweep_next_action(state: &EnvState, pos: Coord, plan: &mut SweepPlan) -> SweepStep {
    for _ in 0..=plan.lane_x.len() + 1 {
        if plan.complete {
            return SweepStep::Hold;
        }
        let lane = plan.lane_index;
        if let Some(p) = plan.approach {
            if pos == p {
                plan.approach = None;
            } else {
                return match step_toward(state, pos, p) {
                    Ok(a) => SweepStep::Move(a),
                    Err(obstacle) => SweepStep::Blocked { obstacle, resume: p },
                };
            }
        }
        let lx = plan.lane_x[lane];
        if pos.x != lx {
            let entry = Coord::xy(lx, pos.y);
            let target = if state.is_forbidden(entry) {
                match free_lane_cell(state, plan, lane, pos.y) {
                    Some(c) => c,
                    None => {
                        plan.skip_lane();
                        continue;
                    }
                }
            } else {
                entry
            };
            plan.approach = Some(target);
            continue;
        }
        let end = plan.lane_end(lane);
        if pos.y != end {
            let a = Action::along(1, plan.heading(lane).sign());
            let next = pos + a.delta();
            if !state.is_forbidden(next) {
                return SweepStep::Move(a);
            }
            match free_lane_cell(state, plan, lane, next.y) {
                Some(resume) => {
                    return SweepStep::Blocked {
                        obstacle: state.obstacle_at(next),
                        resume,
                    }
                }
                None => {
                    plan.skip_lane();
                    continue;
                }
            }
        }
        plan.skip_lane();
    }
    SweepStep::Hold
}

/// Team-shared record of cells that have been inside some agent's window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    width: i32,
    height: i32,
    bits: Vec<bool>,
}

impl Coverage {
    pub fn new(grid: &GridConfig) -> Self {
        Self {
            width: grid.width,
            height: grid.height,
            bits: vec![false; (grid.width * grid.height) as usize],
        }
    }

    pub fn mark_window(&mut self, center: Coord) {
        let x0 = (center.x - HALF_WINDOW).max(0);
        let x1 = (center.x + HALF_WINDOW).min(self.width);
        let y0 = (center.y - HALF_WINDOW).max(0);
        let y1 = (center.y + HALF_WINDOW).min(self.height);
        for y in y0..y1 {
            let row = (y * self.width) as usize;
            for x in x0..x1 {
                self.bits[row + x as usize] = true;
            }
        }
    }

    pub fn is_covered(&self, c: Coord) -> bool {
        c.x >= 0 && c.y >= 0 && c.x < self.width && c.y < self.height && self.bits[(c.y * self.width + c.x) as usize]
    }

    /// Whether the window centered on `p` contains a free cell not yet covered.
    pub fn window_has_unswept(&self, state: &EnvState, p: Coord) -> bool {
        for y in p.y - HALF_WINDOW..p.y + HALF_WINDOW {
            for x in p.x - HALF_WINDOW..p.x + HALF_WINDOW {
                let c = Coord::xy(x, y);
                if state.in_grid(c) && !self.is_covered(c) && !state.is_forbidden(c) {
                    return true;
                }
            }
        }
        false
    }

    /// Free cells not yet covered.
    pub fn uncovered_free(&self, state: &EnvState) -> usize {
        let mut n = 0;
        for y in 0..self.height {
            for x in 0..self.width {
                let c = Coord::xy(x, y);
                if !state.is_forbidden(c) && !self.is_covered(c) {
                    n += 1;
                }
            }
        }
        n
    }
}
