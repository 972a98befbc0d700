use dronenav_ffi::*;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(s: *mut c_char) -> String {
    let out = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe { dn_string_free(s) };
    out
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(dn_last_error()) }.to_str().unwrap().to_owned()
}

const SPEC: &str = r#"{"n_obstacles": 3, "grid": {"step_cells": 2, "obstacle_half_extent": 7}}"#;

fn env(spec: &str, seed: u64) -> *mut DnEnv {
    let mut h = ptr::null_mut();
    let s = cstr(spec);
    assert_eq!(
        unsafe { dn_env_create(s.as_ptr(), seed, &mut h) },
        DnStatus::Ok,
        "{}",
        last_error()
    );
    h
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(dn_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn env_steps_and_observes() {
    let h = env(SPEC, 4);
    let (mut agents, mut len, mut actions) = (0u32, 0usize, 0u32);
    assert_eq!(
        unsafe { dn_env_shape(h, &mut agents, &mut len, &mut actions) },
        DnStatus::Ok
    );
    assert_eq!((agents, len, actions), (2, 400, 4));
    let mut buf = vec![0f32; len];
    assert_eq!(unsafe { dn_env_observation(h, 0, buf.as_mut_ptr(), len) }, DnStatus::Ok);
    assert!(buf.iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(
        unsafe { dn_env_observation(h, 0, buf.as_mut_ptr(), 10) },
        DnStatus::BufferTooSmall
    );
    assert!(last_error().contains("400"));

    let mut step = DnStep::default();
    assert_eq!(unsafe { dn_env_step(h, 0, 3, &mut step) }, DnStatus::Ok);
    assert!(!step.died);
    assert_eq!(
        unsafe { dn_env_step(h, 0, 9, ptr::null_mut()) },
        DnStatus::InvalidArgument
    );
    assert_eq!(unsafe { dn_env_step(h, 7, 0, ptr::null_mut()) }, DnStatus::UnknownAgent);
    assert_eq!(unsafe { dn_env_end_cycle(h) }, DnStatus::Ok);

    let mut outcome = 99;
    assert_eq!(unsafe { dn_env_outcome(h, &mut outcome) }, DnStatus::Ok);
    assert_eq!(outcome, DN_OUTCOME_NONE);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { dn_env_state_json(h, &mut s) }, DnStatus::Ok);
    let json: serde_json::Value = serde_json::from_str(&unsafe { take(s) }).unwrap();
    assert_eq!(json["cycle"], 1);
    unsafe { dn_env_free(h) };
}

#[test]
fn same_seed_same_hash() {
    let hash = |seed| {
        let h = env(SPEC, seed);
        for a in [3, 3, 0, 1] {
            unsafe { dn_env_step(h, 1, a, ptr::null_mut()) };
            unsafe { dn_env_end_cycle(h) };
        }
        let mut s = ptr::null_mut();
        assert_eq!(unsafe { dn_env_state_hash(h, &mut s) }, DnStatus::Ok);
        unsafe { dn_env_free(h) };
        unsafe { take(s) }
    };
    assert_eq!(hash(9), hash(9));
    assert_ne!(hash(9), hash(10));
}

#[test]
fn bad_inputs_map_to_status_codes() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { dn_env_create(ptr::null(), 0, &mut h) }, DnStatus::NullPointer);
    assert_eq!(
        unsafe { dn_env_create(cstr("{").as_ptr(), 0, &mut h) },
        DnStatus::InvalidJson
    );
    assert_eq!(
        unsafe { dn_env_create(cstr(r#"{"n_agents": 0}"#).as_ptr(), 0, &mut h) },
        DnStatus::InvalidScenario
    );
    assert!(h.is_null());
    assert!(!last_error().is_empty());
    let bytes = [0x66u8, 0xff, 0];
    assert_eq!(
        unsafe { dn_env_create(bytes.as_ptr().cast(), 0, &mut h) },
        DnStatus::InvalidUtf8
    );
    assert_eq!(
        unsafe { dn_env_step(ptr::null_mut(), 0, 0, ptr::null_mut()) },
        DnStatus::NullPointer
    );
    unsafe { dn_env_free(ptr::null_mut()) };
    unsafe { dn_string_free(ptr::null_mut()) };
    assert_eq!(
        unsafe { dn_env_create(cstr("{}").as_ptr(), 0, ptr::null_mut()) },
        DnStatus::NullPointer
    );
}

#[test]
fn dead_agents_and_terminal_episodes_are_reported() {
    let h = env(r#"{"n_agents": 1, "n_targets": 1, "max_cycles": 500}"#, 2);
    let mut code = DnStatus::Ok;
    for _ in 0..400 {
        code = unsafe { dn_env_step(h, 0, 0, ptr::null_mut()) };
        if code != DnStatus::Ok {
            break;
        }
        unsafe { dn_env_end_cycle(h) };
    }
    // flying forward forever either reaches the margin or finishes the episode
    let mut outcome = 0;
    unsafe { dn_env_outcome(h, &mut outcome) };
    match code {
        DnStatus::Terminal => assert!(outcome == DN_OUTCOME_ALL_DEAD || outcome == DN_OUTCOME_SUCCESS),
        DnStatus::DeadAgent => assert_eq!(outcome, DN_OUTCOME_ALL_DEAD),
        other => panic!("{other:?}"),
    }
    unsafe { dn_env_free(h) };
}

#[test]
fn episodes_and_experiments_return_json() {
    let spec = cstr(SPEC);
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { dn_run_episode(spec.as_ptr(), 3, ptr::null(), &mut s) },
        DnStatus::Ok,
        "{}",
        last_error()
    );
    let m: serde_json::Value = serde_json::from_str(&unsafe { take(s) }).unwrap();
    assert_eq!(m["seed"], 3);
    assert_eq!(unsafe { dn_run_experiment(spec.as_ptr(), 4, 10, &mut s) }, DnStatus::Ok);
    let r: serde_json::Value = serde_json::from_str(&unsafe { take(s) }).unwrap();
    assert_eq!(r["n_episodes"], 4);
    assert_eq!(r["base_seed"], 10);
    let trained = cstr(r#"{"policy": {"kind": "trained", "path": "nope.bin"}}"#);
    assert_eq!(
        unsafe { dn_run_episode(trained.as_ptr(), 0, ptr::null(), &mut s) },
        DnStatus::InvalidScenario
    );
}

#[test]
fn session_commands_round_trip() {
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { dn_session_create(cstr(SPEC).as_ptr(), 1, ptr::null(), &mut h) },
        DnStatus::Ok
    );
    let send = |cmd: &str| {
        let mut out = ptr::null_mut();
        let code = unsafe { dn_session_command(h, cstr(cmd).as_ptr(), &mut out) };
        let body = if out.is_null() {
            None
        } else {
            Some(unsafe { take(out) })
        };
        (code, body)
    };
    let (code, body) = send(r#"{"type": "step", "n": 3}"#);
    assert_eq!(code, DnStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(&body.unwrap()).unwrap();
    assert_eq!(v["accepted"]["cycle"], 3);
    assert!(!v["events"].as_array().unwrap().is_empty());

    let (code, body) = send(r#"{"type": "rewind", "index": 5}"#);
    assert_eq!(code, DnStatus::Rejected);
    let v: serde_json::Value = serde_json::from_str(&body.unwrap()).unwrap();
    assert_eq!(v["rejection"]["code"], "out_of_range");

    assert_eq!(send(r#"{"type": "warp"}"#).0, DnStatus::InvalidJson);

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { dn_session_scene(h, &mut out) }, DnStatus::Ok);
    let scene: serde_json::Value = serde_json::from_str(&unsafe { take(out) }).unwrap();
    assert_eq!(scene["cycle"], 3);
    assert_eq!(scene["obstacles"].as_array().unwrap().len(), 3);
    assert_eq!(unsafe { dn_session_tick(h, &mut out) }, DnStatus::Ok);
    assert_eq!(unsafe { take(out) }, "[]");
    unsafe { dn_session_free(h) };
}

#[test]
fn header_compiles_and_links_from_c() {
    let header = std::path::Path::new(env!("DRONENAV_HEADER"));
    let text = std::fs::read_to_string(header).unwrap();
    for sym in [
        "dn_env_create",
        "dn_session_command",
        "DN_STATUS_REJECTED",
        "typedef struct DnEnv DnEnv",
    ] {
        assert!(text.contains(sym), "{sym}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include "dronenav.h"
#include <stdio.h>
int main(void) {
    DnEnv *env = NULL;
    if (dn_env_create("{\"n_agents\": 1}", 5, &env) != DN_STATUS_OK) return 1;
    DnStep step;
    if (dn_env_step(env, 0, 3, &step) != DN_STATUS_OK) return 2;
    if (dn_env_step(env, 4, 0, NULL) != DN_STATUS_UNKNOWN_AGENT) return 3;
    if (dn_last_error()[0] == '\0') return 4;
    char *hash = NULL;
    if (dn_env_state_hash(env, &hash) != DN_STATUS_OK) return 5;
    printf("%s\n", hash);
    dn_string_free(hash);
    dn_env_free(env);
    return 0;
}
"#,
    )
    .unwrap();
    // the test binary lives in target/<profile>/deps; the libraries one level up
    let lib_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let staticlib = lib_dir.join("libdronenav_ffi.a");
    assert!(staticlib.is_file(), "missing {}", staticlib.display());
    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = std::process::Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .arg(&staticlib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::process::Command::new(&exe).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim().len(), 16);
}

#[test]
fn checked_in_header_is_current() {
    let generated = std::fs::read_to_string(env!("DRONENAV_HEADER")).unwrap();
    let checked_in = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/dronenav.h")).unwrap();
    assert!(
        generated == checked_in,
        "include/dronenav.h is stale; copy it from {}",
        env!("DRONENAV_HEADER")
    );
}
