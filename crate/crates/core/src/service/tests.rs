use super::*;
use crate::env::Outcome;
use crate::explain::Method;
use crate::geom::Coord;
use crate::policy::{ArchSpec, PolicyParams};
use crate::scenario::{Dims, PolicySource};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use tower::ServiceExt;

fn reach() -> ScenarioSpec {
    let mut s = ScenarioSpec {
        n_obstacles: 4,
        ..Default::default()
    };
    s.grid.step_cells = 2;
    s.grid.obstacle_half_extent = 7;
    s
}

fn session(seed: u64) -> Session {
    Session::create(reach(), seed, None).unwrap().0
}

fn ok(s: &mut Session, cmd: Command) -> (Accepted, Vec<Event>) {
    let (r, ev) = s.apply(cmd);
    (r.unwrap(), ev)
}

fn rejected(s: &mut Session, cmd: Command) -> RejectCode {
    let before = s.state_hash();
    let (r, ev) = s.apply(cmd);
    assert!(ev.is_empty());
    assert_eq!(s.state_hash(), before);
    r.unwrap_err().code
}

fn zero_params_dir(actions: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    PolicyParams::<f32>::zeros(ArchSpec::for_env(1, actions))
        .unwrap()
        .save(&dir.path().join("p.bin"))
        .unwrap();
    dir
}

#[test]
fn new_sessions_start_paused_with_a_full_scene() {
    let (s, ev) = Session::create(reach(), 1, None).unwrap();
    assert_eq!(s.run_state(), RunState::Paused);
    assert_eq!(s.cycle(), 0);
    let [Event::SceneDelta(scene)] = ev.as_slice() else {
        panic!("{ev:?}")
    };
    assert_eq!(scene.cycle, 0);
    assert_eq!(scene.obstacles.as_ref().unwrap().len(), 4);
    let (t, _) = Session::create(reach(), 1, None).unwrap();
    assert_eq!(t.scene(true), s.scene(true));
}

#[test]
fn mismatched_params_are_rejected_at_creation() {
    let dir = zero_params_dir(4);
    let mut s = reach();
    s.dims = Dims::ThreeD;
    s.grid.depth = 200;
    s.policy = PolicySource::Trained { path: "p.bin".into() };
    assert!(matches!(
        Session::create(s, 0, Some(dir.path())),
        Err(SessionError::Controller(_))
    ));
}

#[test]
fn stepping_emits_one_delta_per_cycle() {
    let mut s = session(2);
    let (a, ev) = ok(&mut s, Command::Step { n: 0 });
    assert!(ev.is_empty());
    assert!(matches!(
        a,
        Accepted::Stepped {
            cycles: 0,
            cycle: 0,
            ..
        }
    ));
    let (_, ev) = ok(&mut s, Command::Step { n: 1 });
    assert_eq!(ev.len(), 1);
    assert_eq!(s.cycle(), 1);
}

#[test]
fn long_step_stops_at_terminal() {
    let mut s = session(3);
    let (a, ev) = ok(&mut s, Command::Step { n: 500 });
    let Accepted::Stepped { cycles, cycle, outcome } = a else {
        panic!()
    };
    assert_eq!(outcome, Some(Outcome::Success));
    assert_eq!(cycles, cycle);
    assert!(cycle < 200);
    let deltas: Vec<u64> = ev
        .iter()
        .filter_map(|e| match e {
            Event::SceneDelta(sc) => Some(sc.cycle),
            _ => None,
        })
        .collect();
    assert_eq!(deltas, (1..=cycle).collect::<Vec<_>>());
    assert!(matches!(
        ev.last(),
        Some(Event::Terminal {
            outcome: Outcome::Success,
            ..
        })
    ));
    assert_eq!(s.run_state(), RunState::Terminal);
    assert_eq!(rejected(&mut s, Command::Step { n: 1 }), RejectCode::Terminal);
    assert_eq!(rejected(&mut s, Command::Resume), RejectCode::Terminal);
}

#[test]
fn running_sessions_reject_mutations() {
    let mut s = session(4);
    ok(&mut s, Command::Resume);
    assert_eq!(s.run_state(), RunState::Running);
    for cmd in [
        Command::Step { n: 1 },
        Command::SaveState { label: "x".into() },
        Command::Rewind { index: 0 },
        Command::MoveAgent {
            agent: 0,
            to: Coord::xy(5, 5),
        },
        Command::SetAgentTarget {
            agent: 0,
            target: TargetRef::Target(1),
        },
        Command::Explain {
            agent: 0,
            method: Method::Lime,
            samples: None,
        },
    ] {
        assert_eq!(rejected(&mut s, cmd), RejectCode::NotPaused);
    }
    assert_eq!(s.tick().len(), 1);
    ok(&mut s, Command::GetInfo);
    ok(&mut s, Command::Pause);
    assert!(s.tick().is_empty());
    assert_eq!(s.cycle(), 1);
}

#[test]
fn save_rewind_forward_restore_hashes() {
    let mut s = session(5);
    ok(&mut s, Command::Step { n: 10 });
    let h10 = s.state_hash();
    let (a, ev) = ok(&mut s, Command::SaveState { label: "ten".into() });
    assert!(matches!(
        a,
        Accepted::Saved(SavedInfo {
            index: 0,
            cycle: 10,
            ..
        })
    ));
    assert!(matches!(ev.as_slice(), [Event::StateSaved(_)]));
    ok(&mut s, Command::Step { n: 5 });
    let h15 = s.state_hash();
    ok(
        &mut s,
        Command::SaveState {
            label: "fifteen".into(),
        },
    );
    ok(&mut s, Command::Rewind { index: 0 });
    assert_eq!(s.state_hash(), h10);
    assert_eq!(s.cycle(), 10);
    ok(&mut s, Command::ForwardTo { index: 1 });
    assert_eq!(s.state_hash(), h15);
    assert_eq!(rejected(&mut s, Command::Rewind { index: 3 }), RejectCode::OutOfRange);
}

#[test]
fn restored_states_continue_identically() {
    let mut s = session(6);
    ok(&mut s, Command::Step { n: 20 });
    ok(&mut s, Command::SaveState { label: "a".into() });
    let chain = |s: &mut Session| -> Vec<String> {
        (0..50)
            .map_while(|_| {
                let (r, _) = s.apply(Command::Step { n: 1 });
                r.ok().map(|_| s.state_hash())
            })
            .collect()
    };
    let first = chain(&mut s);
    ok(&mut s, Command::Rewind { index: 0 });
    let second = chain(&mut s);
    assert!(!first.is_empty());
    assert_eq!(first, second);
    // a fresh session driven the same way reaches the same chain
    let mut t = session(6);
    ok(&mut t, Command::Step { n: 20 });
    assert_eq!(chain(&mut t), first);
}

#[test]
fn operator_moves_respect_obstacles() {
    let mut s = session(7);
    let to = Coord::xy(50, 50);
    if !s.env().is_forbidden(to) {
        ok(&mut s, Command::MoveAgent { agent: 0, to });
        let info = s.info();
        assert_eq!(info.agents[0].position, to);
        assert_eq!(s.env().observation(0).unwrap().center, to);
    }
    let o = s.env().obstacles[0].center;
    assert_eq!(
        rejected(&mut s, Command::MoveAgent { agent: 0, to: o }),
        RejectCode::Forbidden
    );
    assert_eq!(
        rejected(&mut s, Command::MoveAgent { agent: 9, to }),
        RejectCode::UnknownAgent
    );
}

#[test]
fn retargeting_pins_until_seen() {
    let mut s = ScenarioSpec {
        n_obstacles: 0,
        ..reach()
    };
    s.max_cycles = 400;
    let mut s = Session::create(s, 8, None).unwrap().0;
    ok(
        &mut s,
        Command::SetAgentTarget {
            agent: 1,
            target: TargetRef::Target(3),
        },
    );
    assert_eq!(s.info().agents[1].target, Some(3));
    while !s.env().targets[3].seen && s.run_state() == RunState::Paused {
        ok(&mut s, Command::Step { n: 1 });
        if !s.env().targets[3].seen && s.env().agents[1].alive {
            assert_eq!(s.env().agents[1].assigned_target, Some(3));
        }
    }
    assert!(s.env().targets[3].seen);
    assert_eq!(
        rejected(
            &mut s,
            Command::SetAgentTarget {
                agent: 0,
                target: TargetRef::Target(42)
            }
        ),
        if s.run_state() == RunState::Terminal {
            RejectCode::Terminal
        } else {
            RejectCode::UnknownTarget
        }
    );
}

#[test]
fn explanations_need_a_model() {
    let mut s = session(9);
    assert_eq!(
        rejected(
            &mut s,
            Command::Explain {
                agent: 0,
                method: Method::Shap,
                samples: None
            }
        ),
        RejectCode::NoModel
    );
    let dir = zero_params_dir(4);
    let spec = ScenarioSpec {
        policy: PolicySource::Trained { path: "p.bin".into() },
        ..reach()
    };
    let mut s = Session::create(spec, 9, Some(dir.path())).unwrap().0;
    for method in [Method::Lime, Method::Shap] {
        let (a, ev) = ok(
            &mut s,
            Command::Explain {
                agent: 0,
                method,
                samples: Some(150),
            },
        );
        let Accepted::Explained { fidelity, .. } = a else {
            panic!()
        };
        assert_eq!(fidelity.len(), 4);
        let [Event::ExplanationReady(ex)] = ev.as_slice() else {
            panic!()
        };
        assert_eq!(ex.map.method, method);
        assert_eq!(ex.map.values.len(), 4);
        assert_eq!(ex.center, s.env().agents[0].position);
    }
}

#[test]
fn snapshots_export_and_import() {
    let mut s = session(10);
    ok(&mut s, Command::Step { n: 4 });
    ok(&mut s, Command::SaveState { label: "a".into() });
    let bytes = s.snapshot_bytes(0).unwrap().to_vec();
    let mut t = session(10);
    let (info, _) = t.import_snapshot("b".into(), &bytes).unwrap();
    ok(&mut t, Command::Rewind { index: info.index });
    assert_eq!(t.state_hash(), s.state_hash());
    assert!(t.import_snapshot("bad".into(), &bytes[..10]).is_err());
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<serde_json::Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap()
}

fn reach_json() -> serde_json::Value {
    serde_json::to_value(reach()).unwrap()
}

#[tokio::test]
async fn http_session_lifecycle() {
    let app = router(Registry::new(ServiceConfig::default()));
    let (st, body) = call(
        &app,
        "POST",
        "/v1/sessions",
        Some(serde_json::json!({"spec": reach_json(), "seed": 3})),
    )
    .await;
    assert_eq!(st, StatusCode::CREATED);
    let created = json(&body);
    assert_eq!(created["version"], 1);
    let id = created["id"].as_str().unwrap().to_string();
    assert_eq!(created["scene"]["event"]["type"], "scene_delta");
    assert_eq!(created["scene"]["event"]["run_state"], "paused");

    let cmd = |c: serde_json::Value| (format!("/v1/sessions/{id}/commands"), Some(c));
    let (u, b) = cmd(serde_json::json!({"type": "step", "n": 3}));
    let (st, body) = call(&app, "POST", &u, b).await;
    assert_eq!(st, StatusCode::OK);
    let ack = json(&body);
    assert_eq!(ack["ok"], true);
    assert_eq!(ack["seq"], 1);
    assert_eq!(ack["accepted"]["cycle"], 3);

    let (u, b) = cmd(serde_json::json!({"type": "save_state", "label": "three"}));
    assert_eq!(call(&app, "POST", &u, b).await.0, StatusCode::OK);
    let (u, b) = cmd(serde_json::json!({"type": "rewind", "index": 5}));
    let (st, body) = call(&app, "POST", &u, b).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(json(&body)["rejection"]["code"], "out_of_range");
    assert_eq!(json(&body)["seq"], 3);

    let (u, b) = cmd(serde_json::json!({"type": "explain", "agent": 0, "method": "lime"}));
    let (st, body) = call(&app, "POST", &u, b).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(json(&body)["rejection"]["message"], "no model");

    let (u, b) = cmd(serde_json::json!({"type": "fly_away"}));
    assert_eq!(call(&app, "POST", &u, b).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let (st, bytes) = call(&app, "GET", &format!("/v1/sessions/{id}/snapshots/0"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(crate::env::EnvState::decode(&bytes).unwrap().cycle, 3);
    assert_eq!(
        call(&app, "GET", &format!("/v1/sessions/{id}/snapshots/9"), None)
            .await
            .0,
        StatusCode::NOT_FOUND
    );

    let (st, body) = call(&app, "GET", "/v1/sessions", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(json(&body)["sessions"][0]["cycle"], 3);
    assert_eq!(json(&body)["sessions"][0]["saved_states"], 1);

    assert_eq!(
        call(&app, "DELETE", &format!("/v1/sessions/{id}"), None).await.0,
        StatusCode::NO_CONTENT
    );
    assert_eq!(
        call(&app, "GET", &format!("/v1/sessions/{id}"), None).await.0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn http_rejects_bad_sessions() {
    let app = router(Registry::new(ServiceConfig::default()));
    let mut spec = reach_json();
    spec["n_agents"] = serde_json::json!(0);
    let (st, body) = call(&app, "POST", "/v1/sessions", Some(serde_json::json!({"spec": spec}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json(&body)["error"]["code"], "invalid_spec");
    let (st, _) = call(&app, "POST", "/v1/sessions", Some(serde_json::json!({"bogus": 1}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    let (st, body) = call(
        &app,
        "POST",
        "/v1/sessions",
        Some(serde_json::json!({"spec": reach_json(), "params_path": "/nonexistent/p.bin"})),
    )
    .await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json(&body)["error"]["code"], "invalid_params");
    assert_eq!(
        call(&app, "GET", "/v1/sessions/nope/events", None).await.0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn event_stream_is_ordered() {
    let reg = Registry::new(ServiceConfig::default());
    let h = reg.create(reach(), 3, None).unwrap();
    let (first, mut rx) = h.subscribe();
    assert!(matches!(first.event, Event::SceneDelta(ref s) if s.cycle == 0));
    let ack = h.command(Command::Step { n: 4 }).await.unwrap();
    assert!(ack.ok);
    let mut cycles = Vec::new();
    let mut seqs = Vec::new();
    for _ in 0..4 {
        let e = rx.recv().await.unwrap();
        seqs.push(e.seq);
        if let Event::SceneDelta(s) = e.event {
            cycles.push(s.cycle);
        }
    }
    assert_eq!(cycles, vec![1, 2, 3, 4]);
    assert!(seqs.windows(2).all(|w| w[0] < w[1]));
}

#[tokio::test]
async fn running_sessions_tick_and_pause() {
    let reg = Registry::new(ServiceConfig {
        tick_rate: 200.0,
        ..Default::default()
    });
    let h = reg.create(reach(), 3, None).unwrap();
    assert!(h.command(Command::Resume).await.unwrap().ok);
    tokio::time::sleep(std::time::Duration::from_millis(100)).await;
    let blocked = h.command(Command::SaveState { label: "x".into() }).await.unwrap();
    assert_eq!(blocked.rejection.unwrap().code, RejectCode::NotPaused);
    assert!(h.command(Command::Pause).await.unwrap().ok);
    let c1 = h.summary().await.unwrap().cycle;
    assert!(c1 > 0);
    tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    assert_eq!(h.summary().await.unwrap().cycle, c1);
}

#[tokio::test]
async fn sse_endpoint_streams_the_current_scene() {
    let reg = Registry::new(ServiceConfig::default());
    let h = reg.create(reach(), 1, None).unwrap();
    let app = router(reg);
    let resp = app
        .oneshot(
            Request::builder()
                .uri(format!("/v1/sessions/{}/events", h.id))
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body();
    let frame = body.frame().await.unwrap().unwrap();
    let text = String::from_utf8(frame.into_data().unwrap().to_vec()).unwrap();
    assert!(text.starts_with("event: scene_delta\n"), "{text}");
    assert!(text.contains("\"obstacles\""));
}

#[tokio::test]
async fn lagging_subscribers_skip_to_the_latest_scene() {
    let reg = Registry::new(ServiceConfig {
        event_buffer: 2,
        ..Default::default()
    });
    let h = reg.create(reach(), 1, None).unwrap();
    let app = router(reg);
    let resp = app
        .oneshot(
            Request::builder()
                .uri(format!("/v1/sessions/{}/events", h.id))
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    let mut body = resp.into_body();
    let _initial = body.frame().await.unwrap().unwrap();
    assert!(h.command(Command::Step { n: 10 }).await.unwrap().ok);
    let frame = body.frame().await.unwrap().unwrap();
    let text = String::from_utf8(frame.into_data().unwrap().to_vec()).unwrap();
    let data = text.lines().find_map(|l| l.strip_prefix("data: ")).unwrap();
    let env: EventEnvelope = serde_json::from_str(data).unwrap();
    let Event::SceneDelta(scene) = env.event else {
        panic!("{text}")
    };
    assert_eq!(scene.cycle, 10);
    assert!(scene.obstacles.is_some());
}
