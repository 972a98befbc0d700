mod common;

use common::bfs_distance;
use dronenav::controller::{run_episode, Brain, Source};
use dronenav::env::EnvState;
use dronenav::geom::{euclidean_distance, manhattan_distance, Metric};
use dronenav::rules::{detect_stuck, line_of_sight};
use dronenav::{Action, Coord, ScenarioSpec, Task};
use proptest::prelude::*;

fn coord3() -> impl Strategy<Value = Coord> {
    (-50..50i32, -50..50i32, -50..50i32).prop_map(|(x, y, z)| Coord::new(x, y, z))
}

fn reach(n_obstacles: usize) -> ScenarioSpec {
    let mut s = ScenarioSpec {
        n_obstacles,
        ..Default::default()
    };
    s.grid.step_cells = 2;
    s.grid.obstacle_half_extent = 7;
    s
}

fn search(n_obstacles: usize, moving: bool) -> ScenarioSpec {
    ScenarioSpec {
        task: Task::Search,
        n_obstacles,
        targets_moving: moving,
        max_cycles: 300,
        ..Default::default()
    }
}

fn actions(n: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..4usize, 1..n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn manhattan_is_a_metric(a in coord3(), b in coord3(), c in coord3()) {
        prop_assert_eq!(manhattan_distance(a, a), 0);
        prop_assert_eq!(manhattan_distance(a, b), manhattan_distance(b, a));
        prop_assert!(manhattan_distance(a, c) <= manhattan_distance(a, b) + manhattan_distance(b, c));
        prop_assert_eq!(manhattan_distance(a, b) == 0, a == b);
        prop_assert!(euclidean_distance(a, b) <= manhattan_distance(a, b) as f64 + 1e-9);
    }

    #[test]
    fn manhattan_equals_grid_bfs(ax in 0..12i32, ay in 0..12i32, az in 0..4i32, bx in 0..12i32, by in 0..12i32, bz in 0..4i32) {
        let (a, b) = (Coord::new(ax, ay, az), Coord::new(bx, by, bz));
        prop_assert_eq!(bfs_distance([12, 12, 4], a, b), Some(manhattan_distance(a, b)));
    }

    #[test]
    fn shaped_rewards_telescope(seed in 0..1000u64, moves in actions(80), manhattan in any::<bool>()) {
        let mut s = reach(0);
        s.n_agents = 1;
        s.n_targets = 1;
        s.ablations.alt_distance = manhattan;
        let mut env = EnvState::create(&s, seed).unwrap();
        let metric = if manhattan { Metric::Manhattan } else { Metric::Euclidean };
        let start = env.agents[0].position;
        let goal = env.goal(0).unwrap();
        let mut sum = 0.0;
        for m in moves {
            let out = env.step_agent(0, Action::from_index(m).unwrap()).unwrap();
            sum += out.reward.distance_delta;
            if !out.found.is_empty() || out.died {
                break;
            }
        }
        let want = metric.distance(env.agents[0].position, goal) - metric.distance(start, goal);
        if manhattan {
            prop_assert_eq!(sum, want);
        } else {
            prop_assert!((sum - want).abs() <= 1e-9, "{} vs {}", sum, want);
        }
    }

    #[test]
    fn observations_are_bounded_and_mark_obstacles(seed in 0..500u64, n_obs in 0..10usize, three_d in any::<bool>(), moves in actions(30)) {
        let mut s = reach(n_obs);
        if three_d {
            s.dims = dronenav::Dims::ThreeD;
            s.grid.depth = 30;
        }
        let Ok(mut env) = EnvState::create(&s, seed) else { return Ok(()) };
        for m in moves {
            if env.outcome().is_some() || !env.agents[0].alive {
                break;
            }
            env.step_agent(0, Action::from_index(m).unwrap()).unwrap();
        }
        if !env.agents[0].alive {
            return Ok(());
        }
        let obs = env.observation(0).unwrap();
        for (i, v) in obs.values.iter().enumerate() {
            prop_assert!((-1.0..=1.0).contains(v));
            let c = obs.cell_at(i);
            prop_assert_eq!(obs.index_of(c), Some(i));
            if env.is_forbidden(c) {
                prop_assert_eq!(*v, -1.0);
            }
        }
    }

    #[test]
    fn flags_only_turn_on_and_targets_are_conserved(seed in 0..500u64, moving in any::<bool>(), n_obs in 0..6usize, steps in prop::collection::vec(prop::collection::vec(0..4usize, 2), 1..120)) {
        let s = search(n_obs, moving);
        let mut env = EnvState::create(&s, seed).unwrap();
        let n_targets = env.targets.len();
        let flags = |e: &EnvState| -> Vec<(bool, bool, bool)> {
            e.targets.iter().map(|t| (t.seen, t.escaped, false)).chain(e.agents.iter().map(|a| (!a.alive, false, true))).collect()
        };
        let mut before = flags(&env);
        for acts in steps {
            if env.outcome().is_some() {
                break;
            }
            for (id, a) in acts.into_iter().enumerate() {
                if env.agents[id].alive {
                    env.step_agent(id, Action::from_index(a).unwrap()).unwrap();
                }
            }
            env.end_cycle();
            let after = flags(&env);
            for (b, a) in before.iter().zip(&after) {
                prop_assert!(!b.0 || a.0);
                prop_assert!(!b.1 || a.1);
            }
            prop_assert_eq!(env.targets.len(), n_targets);
            prop_assert!(env.targets.iter().all(|t| !(t.seen && t.escaped)));
            prop_assert_eq!(env.seen_count() + env.escaped_count() + env.unseen_count(), n_targets);
            before = after;
        }
    }

    #[test]
    fn environment_is_deterministic(seed in any::<u64>(), moves in actions(40)) {
        let s = reach(4);
        let Ok(mut a) = EnvState::create(&s, seed) else { return Ok(()) };
        let mut b = EnvState::create(&s, seed).unwrap();
        prop_assert_eq!(a.state_hash(), b.state_hash());
        for m in moves {
            let act = Action::from_index(m).unwrap();
            for id in 0..a.agents.len() {
                if a.agents[id].alive {
                    prop_assert_eq!(a.step_agent(id, act).unwrap(), b.step_agent(id, act).unwrap());
                }
            }
            a.end_cycle();
            b.end_cycle();
            prop_assert_eq!(a.state_hash(), b.state_hash());
        }
        prop_assert_eq!(EnvState::decode(&a.encode()).unwrap().state_hash(), a.state_hash());
    }

    #[test]
    fn line_of_sight_is_symmetric(seed in 0..300u64, ax in 0..200i32, ay in 0..200i32, bx in 0..200i32, by in 0..200i32) {
        let Ok(env) = EnvState::create(&reach(10), seed) else { return Ok(()) };
        let (a, b) = (Coord::xy(ax, ay), Coord::xy(bx, by));
        prop_assert_eq!(line_of_sight(&env, a, b).is_some(), line_of_sight(&env, b, a).is_some());
    }

    #[test]
    fn strictly_decreasing_distance_is_never_stuck(start in 10.0..500.0f64, drops in prop::collection::vec(0.01..3.0f64, 8..30), xs in prop::collection::vec(0..3i32, 8..30)) {
        let mut d = start;
        let h: Vec<(Coord, f64)> = drops.iter().zip(xs.iter().cycle()).map(|(dd, x)| { d -= dd; (Coord::xy(*x, 0), d) }).collect();
        for n in 1..=h.len() {
            prop_assert!(!detect_stuck(&h[..n]));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn episodes_follow_legal_modes_and_account_sources(seed in 0..10_000u64, kind in 0..4usize) {
        let (spec, brain) = match kind {
            0 => (reach(4), Brain::GreedyOracle),
            1 => (search(4, false), Brain::GreedyOracle),
            2 => (search(0, true), Brain::GreedyOracle),
            _ => (search(2, false), Brain::RulesOnly),
        };
        let Ok((trace, m)) = run_episode(&spec, seed, brain) else { return Ok(()) };
        let mut dl = 0;
        for r in trace.records() {
            prop_assert!(r.mode_before.can_become(r.mode_after));
            if r.source == Source::Dl {
                dl += 1;
            }
        }
        prop_assert_eq!(m.cycles_dl, dl);
        prop_assert_eq!(m.cycles_dl + m.cycles_rb, trace.records().count() as u64);
        prop_assert_eq!(m.total_cycles, trace.cycles.len() as u64);
        prop_assert!(m.total_cycles <= spec.max_cycles);
        if spec.task == Task::Search {
            prop_assert_eq!(m.cycles_initial_sweep + m.cycles_rl_search + m.cycles_posterior_sweep, m.total_cycles);
        }
        prop_assert_eq!(m.success, m.outcome == dronenav::env::Outcome::Success);
    }
}
