use crate::env::{EnvState, HALF_WINDOW};
use crate::geom::{Action, Coord, Metric};
use crate::rules::Coverage;

fn round9(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

/// Cells a move would cover before a forbidden cell, stopping where the moving
/// coordinate meets the reference. Targets along the way are ignored.
fn probe(state: &EnvState, from: Coord, action: Action, reference: Coord) -> (Coord, bool) {
    let d = action.delta();
    let axis = action.axis();
    let mut q = from;
    for _ in 0..state.config.step_cells {
        let n = q + d;
        if state.is_forbidden(n) {
            return (q, true);
        }
        q = n;
        if q.get(axis) == reference.get(axis) {
            break;
        }
    }
    (q, false)
}

/// Shaped-greedy move: largest distance reduction toward `reference` under `metric`.
///
/// Ties prefer moves that stay out of forbidden cells, then the axis with the
/// larger remaining displacement, then the lower action index. With `safe_only`,
/// moves that would enter a forbidden cell are never chosen.
pub fn greedy_move(state: &EnvState, pos: Coord, reference: Coord, metric: Metric, safe_only: bool) -> Option<Action> {
    let n = Action::count(state.config.depth);
    let d0 = metric.distance(pos, reference);
    let scored: Vec<(Action, f64, bool)> = Action::ALL[..n]
        .iter()
        .map(|&a| {
            let (q, hit) = probe(state, pos, a, reference);
            (a, round9(d0 - metric.distance(q, reference)), hit)
        })
        .filter(|&(_, _, hit)| !(safe_only && hit))
        .collect();
    let best = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let mut cands: Vec<&(Action, f64, bool)> = scored.iter().filter(|s| s.1 == best).collect();
    if cands.iter().any(|s| !s.2) {
        cands.retain(|s| !s.2);
    }
    cands
        .into_iter()
        .min_by_key(|(a, _, _)| {
            let remaining = (reference.get(a.axis()) - pos.get(a.axis())).abs();
            (-remaining, a.index())
        })
        .map(|s| s.0)
}

/// Unit step toward `to`, horizontal first unless the vertical gap is larger.
pub fn step_toward(pos: Coord, to: Coord) -> Option<Action> {
    let (dx, dy, dz) = (to.x - pos.x, to.y - pos.y, to.z - pos.z);
    if dx != 0 && dx.abs() >= dy.abs() {
        Some(Action::along(0, dx))
    } else if dy != 0 {
        Some(Action::along(1, dy))
    } else if dz != 0 {
        Some(Action::along(2, dz))
    } else {
        None
    }
}

/// Nearest free, not yet observed cell in the zone-sized box around the finds.
pub fn frontier_cell(
    state: &EnvState,
    coverage: &Coverage,
    pos: Coord,
    finds: &[Coord],
    zone_side: i32,
) -> Option<Coord> {
    let m = state.config.margin;
    let reach = zone_side.max(2 * HALF_WINDOW) - 1;
    let (min_x, max_x) = finds
        .iter()
        .fold((i32::MAX, i32::MIN), |(a, b), f| (a.min(f.x), b.max(f.x)));
    let (min_y, max_y) = finds
        .iter()
        .fold((i32::MAX, i32::MIN), |(a, b), f| (a.min(f.y), b.max(f.y)));
    let x0 = (max_x - reach).max(m);
    let x1 = (min_x + reach).min(state.config.width - m - 1);
    let y0 = (max_y - reach).max(m);
    let y1 = (min_y + reach).min(state.config.height - m - 1);
    let mut best: Option<(i32, Coord)> = None;
    for x in x0..=x1 {
        for y in y0..=y1 {
            let c = Coord::new(x, y, pos.z);
            if coverage.is_covered(c) || state.is_forbidden(c) {
                continue;
            }
            let d = (x - pos.x).abs() + (y - pos.y).abs();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, c));
            }
        }
    }
    best.map(|(_, c)| c)
}
