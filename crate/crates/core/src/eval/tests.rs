use super::*;
use crate::env::Outcome;

fn reach() -> ScenarioSpec {
    let mut s = ScenarioSpec {
        n_obstacles: 4,
        policy: PolicySource::GreedyOracle,
        ..Default::default()
    };
    s.grid.step_cells = 2;
    s.grid.obstacle_half_extent = 7;
    s
}

fn ep(seed: u64, success: bool, any: bool, all: bool, phases: [u64; 3], dl: u64, rb: u64) -> EpisodeMetrics {
    EpisodeMetrics {
        seed,
        outcome: if success { Outcome::Success } else { Outcome::CycleCap },
        success,
        any_agent_hit: any,
        all_agents_hit: all,
        total_cycles: phases.iter().sum(),
        cycles_dl: dl,
        cycles_rb: rb,
        cycles_initial_sweep: phases[0],
        cycles_rl_search: phases[1],
        cycles_posterior_sweep: phases[2],
        targets_seen: 0,
        targets_escaped: 0,
        avoidance_failures: 0,
    }
}

#[test]
fn aggregation_matches_hand_counts() {
    let s = ScenarioSpec {
        task: Task::Search,
        ..Default::default()
    };
    let eps = vec![
        ep(10, true, false, false, [100, 50, 10], 30, 10),
        ep(11, false, true, false, [200, 0, 0], 0, 50),
        ep(12, true, true, true, [40, 20, 0], 10, 0),
        ep(13, true, false, false, [60, 0, 20], 0, 0),
    ];
    let r = ExperimentReport::aggregate(&s, 10, eps).unwrap();
    assert_eq!(r.family, TableFamily::Search);
    assert_eq!(r.seeds(), 10..14);
    assert_eq!(r.success_rate, 75.0);
    assert_eq!(r.any_hit_rate, 50.0);
    assert_eq!(r.all_hit_rate, 25.0);
    assert_eq!(r.dl_percent, 40.0);
    assert_eq!(r.rb_percent, 60.0);
    assert_eq!(r.phases_all.initial_sweep, 100.0);
    assert_eq!(r.phases_all.rl_search, 17.5);
    assert_eq!(r.phases_all.posterior_sweep, 7.5);
    assert_eq!(r.mean_total_cycles, 125.0);
    let ps = r.phases_success.unwrap();
    assert_eq!(ps.total, 100.0);
    assert!((ps.rl_search - 70.0 / 3.0).abs() < 1e-12);
    assert_eq!(r.max_total_cycles, 200);
}

#[test]
fn empty_inputs_are_errors() {
    assert!(matches!(
        ExperimentReport::aggregate(&reach(), 0, vec![]),
        Err(EvalError::Empty)
    ));
    assert!(matches!(run_experiment(&reach(), 0, 0), Err(EvalError::Empty)));
    assert!(matches!(render_report(&[], ReportFormat::Csv), Err(EvalError::Empty)));
}

#[test]
fn eval_seeds_stay_below_training_seeds() {
    assert!(matches!(
        run_experiment(&reach(), 5, TRAIN_SEED_BASE - 2),
        Err(EvalError::Seeds(..))
    ));
}

#[test]
fn reports_are_identical_across_worker_counts() {
    let s = reach();
    let one = run_experiment_with(
        &s,
        12,
        100,
        &EvalOptions {
            workers: 1,
            ..Default::default()
        },
    )
    .unwrap()
    .0;
    let three = run_experiment_with(
        &s,
        12,
        100,
        &EvalOptions {
            workers: 3,
            ..Default::default()
        },
    )
    .unwrap()
    .0;
    assert_eq!(one, three);
    for f in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Table] {
        assert_eq!(
            render_report(std::slice::from_ref(&one), f).unwrap(),
            render_report(std::slice::from_ref(&three), f).unwrap()
        );
    }
    assert_eq!(
        one.episodes.iter().map(|e| e.seed).collect::<Vec<_>>(),
        (100..112).collect::<Vec<_>>()
    );
}

#[test]
fn report_invariants_hold() {
    let mut search = ScenarioSpec {
        task: Task::Search,
        max_cycles: 3000,
        policy: PolicySource::GreedyOracle,
        ..Default::default()
    };
    search.n_obstacles = 3;
    for s in [reach(), search] {
        let r = run_experiment_with(
            &s,
            6,
            0,
            &EvalOptions {
                workers: 2,
                ..Default::default()
            },
        )
        .unwrap()
        .0;
        assert!(r.all_hit_rate <= r.any_hit_rate);
        for e in r.episodes.iter().filter(|e| e.success) {
            assert!(e.total_cycles <= s.max_cycles);
        }
        let p = r.phases_all;
        if s.task == Task::Search {
            assert!((p.initial_sweep + p.rl_search + p.posterior_sweep - p.total).abs() < 1e-9);
        }
        assert!((r.dl_percent + r.rb_percent - 100.0).abs() < 1e-9);
    }
}

#[test]
fn traces_are_kept_on_request_and_replay() {
    let (r, traces) = run_experiment_with(
        &reach(),
        3,
        7,
        &EvalOptions {
            keep_traces: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(traces.len(), 3);
    for (t, e) in traces.iter().zip(&r.episodes) {
        assert_eq!(t.seed, e.seed);
        crate::controller::replay_trace(t).unwrap();
    }
}

#[test]
fn zero_obstacle_sweep_point_is_the_open_scenario() {
    let s = reach();
    let series = obstacle_sweep_experiment(&s, &[0, 4], 5, 3, &EvalOptions::default()).unwrap();
    let open = run_experiment(
        &ScenarioSpec {
            n_obstacles: 0,
            ..s.clone()
        },
        5,
        3,
    )
    .unwrap();
    assert_eq!(series.reports[0], open);
    assert_eq!(series.reports[0].family, TableFamily::Completion);
    assert_eq!(series.reports[1], run_experiment(&s, 5, 3).unwrap());
    let svg = render_series_svg(&series).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
    let csv = render_series(&series).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("obstacles,success_pct"));
}

#[test]
fn search_layout_has_one_target_per_zone() {
    let s = ScenarioSpec {
        task: Task::Search,
        n_targets: 4,
        n_groups: 4,
        ..Default::default()
    };
    for seed in 0..10 {
        let l = generate_search_layout(&s, seed).unwrap();
        assert_eq!(l.zones.len(), 4);
        for z in &l.zones {
            assert_eq!(z.side, 40);
            let inside = l
                .targets
                .iter()
                .filter(|t| t.x >= z.x0 && t.x < z.x0 + z.side && t.y >= z.y0 && t.y < z.y0 + z.side)
                .count();
            assert_eq!(inside, 1, "seed {seed}");
        }
        assert_eq!(l, generate_search_layout(&s, seed).unwrap());
    }
    assert!(generate_search_layout(&reach(), 0).is_err());
}

#[test]
fn renderings_follow_the_family_layout() {
    let r = ExperimentReport::aggregate(&reach(), 5, vec![ep(5, true, false, false, [30, 0, 0], 50, 10)]).unwrap();
    let csv = render_report(std::slice::from_ref(&r), ReportFormat::Csv).unwrap();
    assert_eq!(
        csv,
        "max_cycles,dl_pct,rb_pct,success_pct,any_hit_pct,all_hit_pct\n200,83.33,16.67,100.00,0.00,0.00\n"
    );
    let table = render_report(std::slice::from_ref(&r), ReportFormat::Table).unwrap();
    assert!(table.contains("seeds 5..=5"));
    assert!(table.contains("\"n_obstacles\":4"));
    let json = render_report(std::slice::from_ref(&r), ReportFormat::Json).unwrap();
    let back: Vec<ExperimentReport> = serde_json::from_str(&json).unwrap();
    assert_eq!(back, vec![r.clone()]);
    let mut other = r.clone();
    other.family = TableFamily::Search;
    assert!(matches!(
        render_report(&[r, other], ReportFormat::Csv),
        Err(EvalError::Invalid(_))
    ));
}

#[test]
fn training_cycles_come_from_the_sidecar() {
    use crate::policy::{ArchSpec, PolicyParams};
    let dir = tempfile::tempdir().unwrap();
    let p = PolicyParams::<f32>::zeros(ArchSpec::for_env(1, 4)).unwrap();
    p.save(&dir.path().join("final.bin")).unwrap();
    std::fs::write(dir.path().join("final.json"), r#"{"cycles": 4096}"#).unwrap();
    let s = ScenarioSpec {
        n_obstacles: 0,
        max_cycles: 20,
        policy: PolicySource::Trained {
            path: "final.bin".into(),
        },
        ..reach()
    };
    let opts = EvalOptions {
        base_dir: Some(dir.path()),
        ..Default::default()
    };
    let r = run_experiment_with(&s, 2, 0, &opts).unwrap().0;
    assert_eq!(r.training_cycles, Some(4096));
    let csv = render_report(&[r], ReportFormat::Csv).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("4096,20,"));
}
