use super::{Agent, EnvError, EnvState, Obstacle, Target, Zone};
use crate::geom::Coord;
use crate::scenario::{ScenarioSpec, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MAX_REJECTIONS: usize = 10_000;

fn interior_cell(rng: &mut ChaCha8Rng, spec: &ScenarioSpec) -> Coord {
    let g = &spec.grid;
    let m = g.margin;
    let x = rng.random_range(m..g.width - m);
    let y = rng.random_range(m..g.height - m);
    let z = if g.is_3d() { rng.random_range(m..g.depth - m) } else { 0 };
    Coord::new(x, y, z)
}

fn sample<F>(rng: &mut ChaCha8Rng, what: &str, mut draw: F) -> Result<Coord, EnvError>
where
    F: FnMut(&mut ChaCha8Rng) -> Option<Coord>,
{
    for _ in 0..MAX_REJECTIONS {
        if let Some(c) = draw(rng) {
            return Ok(c);
        }
    }
    Err(EnvError::Unsatisfiable(format!(
        "could not place {what} after {MAX_REJECTIONS} samples"
    )))
}

/// Zone squares for a search layout, drawn without overlap inside the interior.
pub(crate) fn place_zones(rng: &mut ChaCha8Rng, spec: &ScenarioSpec) -> Result<Vec<Zone>, EnvError> {
    let g = &spec.grid;
    let side = spec.zone_side();
    let mut zones: Vec<Zone> = Vec::with_capacity(spec.n_groups);
    for k in 0..spec.n_groups {
        let c = sample(rng, &format!("zone {k}"), |rng| {
            let x0 = rng.random_range(g.margin..=g.width - g.margin - side);
            let y0 = rng.random_range(g.margin..=g.height - g.margin - side);
            let overlaps = zones
                .iter()
                .any(|z| x0 < z.x0 + z.side && z.x0 < x0 + side && y0 < z.y0 + z.side && z.y0 < y0 + side);
            (!overlaps).then_some(Coord::xy(x0, y0))
        })?;
        zones.push(Zone { x0: c.x, y0: c.y, side });
    }
    Ok(zones)
}

pub(crate) fn create(spec: &ScenarioSpec, seed: u64) -> Result<EnvState, EnvError> {
    spec.validate().map_err(EnvError::InvalidScenario)?;
    let g = spec.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obstacle_rng = ChaCha8Rng::seed_from_u64(seed);
    obstacle_rng.set_stream(1);

    let mut taken: Vec<Coord> = Vec::new();
    for k in 0..spec.n_agents {
        let c = sample(&mut rng, &format!("agent {k}"), |rng| {
            let c = interior_cell(rng, spec);
            (!taken.contains(&c)).then_some(c)
        })?;
        taken.push(c);
    }

    let zones = if spec.task == Task::Search {
        place_zones(&mut rng, spec)?
    } else {
        Vec::new()
    };
    for j in 0..spec.n_targets {
        let c = sample(&mut rng, &format!("target {j}"), |rng| {
            let c = match zones.get(j % zones.len().max(1)) {
                Some(z) if spec.task == Task::Search => Coord::xy(
                    rng.random_range(z.x0..z.x0 + z.side),
                    rng.random_range(z.y0..z.y0 + z.side),
                ),
                _ => interior_cell(rng, spec),
            };
            (!taken.contains(&c)).then_some(c)
        })?;
        taken.push(c);
    }

    // Obstacles use RNG stream 1; agents and targets use stream 0.
    let reach = g.obstacle_reach();
    let three_d = g.is_3d();
    let too_big = g.width < 2 * reach + 1 || g.height < 2 * reach + 1 || (three_d && g.depth < 2 * reach + 1);
    if spec.n_obstacles > 0 && too_big {
        return Err(EnvError::Unsatisfiable("obstacle footprint exceeds the grid".into()));
    }
    let mut obstacles: Vec<Obstacle> = Vec::with_capacity(spec.n_obstacles);
    for k in 0..spec.n_obstacles {
        let center = sample(&mut obstacle_rng, &format!("obstacle {k}"), |rng| {
            let x = rng.random_range(reach..g.width - reach);
            let y = rng.random_range(reach..g.height - reach);
            let z = if three_d {
                rng.random_range(reach..g.depth - reach)
            } else {
                0
            };
            let c = Coord::new(x, y, z);
            let probe = Obstacle {
                id: k,
                center: c,
                half_extent: g.obstacle_half_extent,
                safety_margin: g.obstacle_safety_margin,
            };
            let overlaps = obstacles.iter().any(|o| {
                let d = o.center - c;
                d.x.abs() <= 2 * reach && d.y.abs() <= 2 * reach && (!three_d || d.z.abs() <= 2 * reach)
            });
            let covers_entity = taken.iter().any(|&e| probe.covers(e, three_d));
            (!overlaps && !covers_entity).then_some(c)
        })?;
        obstacles.push(Obstacle {
            id: k,
            center,
            half_extent: g.obstacle_half_extent,
            safety_margin: g.obstacle_safety_margin,
        });
    }

    let agents = taken[..spec.n_agents]
        .iter()
        .enumerate()
        .map(|(id, &position)| Agent {
            id,
            position,
            alive: true,
            assigned_target: None,
            waypoint: None,
            pin: None,
        })
        .collect();
    let targets = taken[spec.n_agents..]
        .iter()
        .enumerate()
        .map(|(id, &position)| Target {
            id,
            position,
            seen: false,
            moving: spec.targets_moving,
            escaped: false,
        })
        .collect();

    let mut state = EnvState {
        config: g,
        task: spec.task,
        metric: spec.metric(),
        shaping: spec.ablations.shaping,
        shaping_coef: spec.shaping_coef,
        targets_moving: spec.targets_moving,
        targets_released: false,
        seed,
        cycle: 0,
        agents,
        targets,
        obstacles,
        zones,
        rng,
        cells: Vec::new(),
    };
    state.rebuild_cells();
    state.assign_targets();
    Ok(state)
}
