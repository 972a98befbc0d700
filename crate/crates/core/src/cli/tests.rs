use super::*;
use crate::scenario::{Dims, PolicySource, Task};

fn presets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets")
}

#[test]
fn overrides_set_nested_keys_with_toml_values() {
    let mut t = toml::Table::new();
    apply_override(&mut t, "scenario.grid.width=40").unwrap();
    apply_override(&mut t, "scenario.ablations.rules = false").unwrap();
    apply_override(&mut t, "scenario.task=search").unwrap();
    apply_override(&mut t, "sweep.counts=[1, 2]").unwrap();
    let cfg: RunConfig = toml::Value::Table(t).try_into().unwrap();
    assert_eq!(cfg.scenario.grid.width, 40);
    assert!(!cfg.scenario.ablations.rules);
    assert_eq!(cfg.scenario.task, Task::Search);
    assert_eq!(cfg.sweep.counts, vec![1, 2]);
    let mut t = toml::Table::new();
    assert!(apply_override(&mut t, "no_equals").is_err());
    assert!(apply_override(&mut t, "a..b=1").is_err());
    apply_override(&mut t, "seed=3").unwrap();
    assert!(apply_override(&mut t, "seed.x=3").is_err());
}

#[test]
fn unknown_keys_are_config_errors() {
    for bad in [
        "scenario.n_drones=3",
        "bogus=1",
        "scenario.grid.colour=2",
        "train.lr=0.1",
    ] {
        let e = RunConfig::load(None, &[bad.to_string()]).unwrap_err();
        assert!(!e.0.is_empty(), "{bad}");
    }
    assert!(RunConfig::load(None, &["scenario.n_agents=0".into()]).is_err());
    assert!(RunConfig::load(None, &["eval.episodes=0".into()]).is_err());
}

#[test]
fn every_preset_loads() {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(presets()).unwrap() {
        let p = entry.unwrap().path();
        let cfg = RunConfig::load(Some(&p), &[]).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        names.push(p.file_name().unwrap().to_string_lossy().to_string());
        if names.last().unwrap().starts_with("a6") {
            assert_eq!(cfg.scenario.dims, Dims::ThreeD);
            assert_eq!(cfg.sweep.counts, vec![4, 8, 12, 16, 20]);
        }
    }
    names.sort();
    assert_eq!(names.len(), 8);
    assert!(names.iter().all(|n| n.starts_with('a') && n.ends_with(".toml")));
}

#[test]
fn effective_config_round_trips() {
    let p = presets().join("a3-sparse.toml");
    let cfg = RunConfig::load(Some(&p), &["workers=2".into()]).unwrap();
    assert!(!cfg.scenario.ablations.shaping);
    assert_eq!(cfg.train.total_cycles, 400_000);
    let dir = tempfile::tempdir().unwrap();
    let eff = dir.path().join("effective-config.toml");
    std::fs::write(&eff, cfg.to_toml()).unwrap();
    assert_eq!(RunConfig::load(Some(&eff), &[]).unwrap(), cfg);
}

#[test]
fn relative_parameter_paths_follow_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.toml");
    std::fs::write(&p, "[scenario.policy]\nkind = \"trained\"\npath = \"runs/final.bin\"\n").unwrap();
    let cfg = RunConfig::load(Some(&p), &[]).unwrap();
    assert_eq!(
        cfg.scenario.policy,
        PolicySource::Trained {
            path: dir.path().join("runs/final.bin")
        }
    );
}

#[test]
fn flags_override_the_file() {
    let common = Common {
        config: Some(presets().join("a1-expert-rules.toml")),
        overrides: vec!["eval.episodes=3".into()],
        seed: Some(40),
        workers: Some(2),
        policy: Some("rules-only".into()),
        ..Default::default()
    };
    let cfg = resolve(&common).unwrap();
    assert_eq!(
        (cfg.seed, cfg.eval.base_seed, cfg.workers, cfg.eval.episodes),
        (40, 40, 2, 3)
    );
    assert_eq!(cfg.scenario.policy, PolicySource::RulesOnly);
}

#[test]
fn exit_codes_are_distinct() {
    assert_eq!(main_with_args(["dronenav", "frobnicate"]), EXIT_CONFIG);
    assert_eq!(main_with_args(["dronenav", "eval", "--set", "nope=1"]), EXIT_CONFIG);
    assert_eq!(
        main_with_args(["dronenav", "replay", "/nonexistent/trace.jsonl"]),
        EXIT_RUNTIME
    );
    let codes = [EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY];
    for (i, a) in codes.iter().enumerate() {
        for b in &codes[i + 1..] {
            assert_ne!(a, b);
        }
    }
}
