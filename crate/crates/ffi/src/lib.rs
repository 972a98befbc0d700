//! C ABI over the simulator.
//!
//! Handles are opaque pointers created by `dn_*_create` and released by the matching
//! `dn_*_free`. Every fallible call returns a [`DnStatus`]; on failure the message is
//! available from [`dn_last_error`] on the same thread. Strings returned through
//! `char **` out-parameters are owned by the caller and released with [`dn_string_free`].

use dronenav::controller::{run_episode, Brain};
use dronenav::env::{EnvError, EnvState, Outcome};
use dronenav::eval::run_experiment;
use dronenav::service::{Command, Session};
use dronenav::{Action, ScenarioSpec};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    InvalidScenario = 4,
    InvalidArgument = 5,
    UnknownAgent = 6,
    DeadAgent = 7,
    Terminal = 8,
    BufferTooSmall = 9,
    Rejected = 10,
    Internal = 11,
}

/// Outcome codes written by [`dn_env_outcome`].
pub const DN_OUTCOME_NONE: i32 = -1;
pub const DN_OUTCOME_SUCCESS: i32 = 0;
pub const DN_OUTCOME_ALL_DEAD: i32 = 1;
pub const DN_OUTCOME_ESCAPED: i32 = 2;
pub const DN_OUTCOME_CYCLE_CAP: i32 = 3;

/// Simulation state of one scenario.
pub struct DnEnv {
    spec: ScenarioSpec,
    state: EnvState,
}

/// Operator session with the controller attached.
pub struct DnSession {
    inner: Session,
}

/// Result of one agent move.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DnStep {
    pub reward: f64,
    pub distance_delta: f64,
    pub targets_reached: u32,
    pub died: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(DnStatus, String);

impl Failure {
    fn new(status: DnStatus, msg: impl Into<String>) -> Self {
        Failure(status, msg.into())
    }
}

impl From<EnvError> for Failure {
    fn from(e: EnvError) -> Self {
        let status = match e {
            EnvError::InvalidScenario(_) | EnvError::Unsatisfiable(_) => DnStatus::InvalidScenario,
            EnvError::UnknownAgent(_) => DnStatus::UnknownAgent,
            EnvError::DeadAgent(_) => DnStatus::DeadAgent,
            EnvError::Terminal => DnStatus::Terminal,
            _ => DnStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DnStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DnStatus::Internal
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(DnStatus::NullPointer, "null string"));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|e| Failure::new(DnStatus::InvalidUtf8, e.to_string()))
}

unsafe fn read_spec(p: *const c_char) -> Result<ScenarioSpec, Failure> {
    let text = unsafe { read_str(p)? };
    let spec: ScenarioSpec =
        serde_json::from_str(text).map_err(|e| Failure::new(DnStatus::InvalidJson, e.to_string()))?;
    spec.validate()
        .map_err(|e| Failure::new(DnStatus::InvalidScenario, e))?;
    Ok(spec)
}

unsafe fn out_ref<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    unsafe { p.as_mut() }.ok_or_else(|| Failure::new(DnStatus::NullPointer, "null output pointer"))
}

unsafe fn handle<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    unsafe { p.as_mut() }.ok_or_else(|| Failure::new(DnStatus::NullPointer, "null handle"))
}

fn give_string(s: String, out: &mut *mut c_char) -> Result<(), Failure> {
    *out = CString::new(s)
        .map_err(|e| Failure::new(DnStatus::Internal, e.to_string()))?
        .into_raw();
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string(v).map_err(|e| Failure::new(DnStatus::Internal, e.to_string()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn dn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn dn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Creates an environment from a JSON scenario.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dn_env_create(spec_json: *const c_char, seed: u64, out: *mut *mut DnEnv) -> DnStatus {
    guard(|| {
        let out = unsafe { out_ref(out)? };
        *out = ptr::null_mut();
        let spec = unsafe { read_spec(spec_json)? };
        let mut state = EnvState::create(&spec, seed)?;
        state.detect_all();
        *out = Box::into_raw(Box::new(DnEnv { spec, state }));
        Ok(())
    })
}

/// # Safety
/// `env` must be null or a handle from [`dn_env_create`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dn_env_free(env: *mut DnEnv) {
    if !env.is_null() {
        drop(unsafe { Box::from_raw(env) });
    }
}

/// Number of agents and the length of one observation.
///
/// # Safety
/// `env` must be a live handle; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dn_env_shape(
    env: *mut DnEnv,
    n_agents: *mut u32,
    obs_len: *mut usize,
    n_actions: *mut u32,
) -> DnStatus {
    guard(|| {
        let env = unsafe { handle(env)? };
        let slices = if env.state.config.is_3d() { 20 } else { 1 };
        unsafe {
            *out_ref(n_agents)? = env.state.agents.len() as u32;
            *out_ref(obs_len)? = dronenav::env::Observation::len_for(slices);
            *out_ref(n_actions)? = Action::count(env.state.config.depth) as u32;
        }
        Ok(())
    })
}

/// Moves one agent. `action` is 0..6 in the order forward, backward, left, right, up, down.
///
/// # Safety
/// `env` must be a live handle; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn dn_env_step(env: *mut DnEnv, agent: u32, action: u32, out: *mut DnStep) -> DnStatus {
    guard(|| {
        let env = unsafe { handle(env)? };
        if env.state.outcome().is_some() || env.state.cycle >= env.spec.max_cycles {
            return Err(EnvError::Terminal.into());
        }
        let action = Action::from_index(action as usize)
            .ok_or_else(|| Failure::new(DnStatus::InvalidArgument, format!("unknown action {action}")))?;
        let r = env.state.step_agent(agent as usize, action)?;
        if let Some(out) = unsafe { out.as_mut() } {
            *out = DnStep {
                reward: r.reward.total,
                distance_delta: r.reward.distance_delta,
                targets_reached: r.reward.targets_reached,
                died: r.died,
            };
        }
        Ok(())
    })
}

/// Closes the current cycle (target motion, detections, cycle counter).
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dn_env_end_cycle(env: *mut DnEnv) -> DnStatus {
    guard(|| {
        let env = unsafe { handle(env)? };
        env.state.end_cycle();
        Ok(())
    })
}

/// Writes the observation of `agent` into `buf`. `len` must be at least the length
/// reported by [`dn_env_shape`].
///
/// # Safety
/// `env` must be a live handle and `buf` valid for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn dn_env_observation(env: *mut DnEnv, agent: u32, buf: *mut f32, len: usize) -> DnStatus {
    guard(|| {
        let env = unsafe { handle(env)? };
        let obs = env.state.observation(agent as usize)?;
        if buf.is_null() {
            return Err(Failure::new(DnStatus::NullPointer, "null buffer"));
        }
        if len < obs.values.len() {
            return Err(Failure::new(
                DnStatus::BufferTooSmall,
                format!("need {} floats, got {len}", obs.values.len()),
            ));
        }
        unsafe { ptr::copy_nonoverlapping(obs.values.as_ptr(), buf, obs.values.len()) };
        Ok(())
    })
}

/// Writes one of the `DN_OUTCOME_*` codes, applying the scenario's cycle cap.
///
/// # Safety
/// `env` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dn_env_outcome(env: *mut DnEnv, out: *mut i32) -> DnStatus {
    guard(|| {
        let env = unsafe { handle(env)? };
        let outcome = env
            .state
            .outcome()
            .or((env.state.cycle >= env.spec.max_cycles).then_some(Outcome::CycleCap));
        unsafe {
            *out_ref(out)? = match outcome {
                None => DN_OUTCOME_NONE,
                Some(Outcome::Success) => DN_OUTCOME_SUCCESS,
                Some(Outcome::AllDead) => DN_OUTCOME_ALL_DEAD,
                Some(Outcome::Escaped) => DN_OUTCOME_ESCAPED,
                Some(Outcome::CycleCap) => DN_OUTCOME_CYCLE_CAP,
            };
        }
        Ok(())
    })
}

/// Full state as JSON.
///
/// # Safety
/// `env` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dn_env_state_json(env: *mut DnEnv, out: *mut *mut c_char) -> DnStatus {
    guard(|| {
        let env = unsafe { handle(env)? };
        give_string(env.state.to_json(), unsafe { out_ref(out)? })
    })
}

/// Digest of the full state.
///
/// # Safety
/// `env` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dn_env_state_hash(env: *mut DnEnv, out: *mut *mut c_char) -> DnStatus {
    guard(|| {
        let env = unsafe { handle(env)? };
        give_string(env.state.state_hash(), unsafe { out_ref(out)? })
    })
}

/// Runs one controller episode with the scenario's policy and returns its metrics as JSON.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string, `base_dir` null or a NUL-terminated
/// path used to resolve relative parameter files, and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dn_run_episode(
    spec_json: *const c_char,
    seed: u64,
    base_dir: *const c_char,
    out: *mut *mut c_char,
) -> DnStatus {
    guard(|| {
        let out = unsafe { out_ref(out)? };
        let spec = unsafe { read_spec(spec_json)? };
        let base = if base_dir.is_null() {
            None
        } else {
            Some(unsafe { read_str(base_dir)? })
        };
        let brain = Brain::for_spec(&spec, base.map(Path::new))
            .map_err(|e| Failure::new(DnStatus::InvalidScenario, e.to_string()))?;
        let (_, metrics) =
            run_episode(&spec, seed, brain).map_err(|e| Failure::new(DnStatus::InvalidScenario, e.to_string()))?;
        give_string(to_json(&metrics)?, out)
    })
}

/// Runs `n` episodes from `base_seed` and returns the aggregate report as JSON.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dn_run_experiment(
    spec_json: *const c_char,
    n: u32,
    base_seed: u64,
    out: *mut *mut c_char,
) -> DnStatus {
    guard(|| {
        let out = unsafe { out_ref(out)? };
        let spec = unsafe { read_spec(spec_json)? };
        let report = run_experiment(&spec, n as usize, base_seed)
            .map_err(|e| Failure::new(DnStatus::InvalidArgument, e.to_string()))?;
        give_string(to_json(&report)?, out)
    })
}

/// Creates a paused operator session.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string, `base_dir` null or a NUL-terminated
/// path, and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dn_session_create(
    spec_json: *const c_char,
    seed: u64,
    base_dir: *const c_char,
    out: *mut *mut DnSession,
) -> DnStatus {
    guard(|| {
        let out = unsafe { out_ref(out)? };
        *out = ptr::null_mut();
        let spec = unsafe { read_spec(spec_json)? };
        let base = if base_dir.is_null() {
            None
        } else {
            Some(unsafe { read_str(base_dir)? })
        };
        let (inner, _) = Session::create(spec, seed, base.map(Path::new))
            .map_err(|e| Failure::new(DnStatus::InvalidScenario, e.to_string()))?;
        *out = Box::into_raw(Box::new(DnSession { inner }));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a handle from [`dn_session_create`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dn_session_free(s: *mut DnSession) {
    if !s.is_null() {
        drop(unsafe { Box::from_raw(s) });
    }
}

/// Applies a JSON command such as `{"type":"step","n":5}`.
///
/// On acceptance `out` receives `{"accepted":…,"events":[…]}` and the call returns `Ok`.
/// On rejection it receives `{"rejection":{"code":…,"message":…}}` and the call returns
/// `Rejected`.
///
/// # Safety
/// `s` must be a live handle, `cmd_json` a NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dn_session_command(
    s: *mut DnSession,
    cmd_json: *const c_char,
    out: *mut *mut c_char,
) -> DnStatus {
    guard(|| {
        let s = unsafe { handle(s)? };
        let out = unsafe { out_ref(out)? };
        *out = ptr::null_mut();
        let cmd: Command = serde_json::from_str(unsafe { read_str(cmd_json)? })
            .map_err(|e| Failure::new(DnStatus::InvalidJson, e.to_string()))?;
        match s.inner.apply(cmd) {
            (Ok(accepted), events) => give_string(
                to_json(&serde_json::json!({ "accepted": accepted, "events": events }))?,
                out,
            ),
            (Err(rejection), _) => {
                let msg = rejection.message.clone();
                give_string(to_json(&serde_json::json!({ "rejection": rejection }))?, out)?;
                Err(Failure::new(DnStatus::Rejected, msg))
            }
        }
    })
}

/// Advances a running session by one tick and returns the events as a JSON array.
///
/// # Safety
/// `s` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dn_session_tick(s: *mut DnSession, out: *mut *mut c_char) -> DnStatus {
    guard(|| {
        let s = unsafe { handle(s)? };
        let events = s.inner.tick();
        give_string(to_json(&events)?, unsafe { out_ref(out)? })
    })
}

/// Current scene with obstacles, as JSON.
///
/// # Safety
/// `s` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dn_session_scene(s: *mut DnSession, out: *mut *mut c_char) -> DnStatus {
    guard(|| {
        let s = unsafe { handle(s)? };
        give_string(to_json(&s.inner.scene(true))?, unsafe { out_ref(out)? })
    })
}
