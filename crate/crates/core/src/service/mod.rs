//! Session-based control surface: JSON commands over HTTP and a server-sent event stream per session.

mod http;
mod session;

pub use http::{router, serve};
pub use session::{
    Accepted, AgentView, Command, Event, Explanation, Info, ObstacleView, RejectCode, Rejection, RunState, SavedInfo,
    Scene, Session, SessionError, TargetRef, TargetView,
};

use crate::scenario::ScenarioSpec;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;
use tokio::sync::{broadcast, mpsc, oneshot, watch};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Cycles per second while a session is Running.
    pub tick_rate: f64,
    /// Events buffered per subscriber before it falls back to the latest scene.
    pub event_buffer: usize,
    /// Directory that relative parameter paths are resolved against.
    pub base_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            tick_rate: 10.0,
            event_buffer: 256,
            base_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub version: u32,
    pub session: String,
    /// Position of the command in the session's arrival order.
    pub seq: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<Accepted>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<Rejection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub version: u32,
    pub session: String,
    pub seq: u64,
    pub event: Event,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub seed: u64,
    pub cycle: u64,
    pub run_state: RunState,
    pub saved_states: usize,
    pub spec: ScenarioSpec,
}

enum Msg {
    Command(Command, oneshot::Sender<Ack>),
    Import(String, Vec<u8>, oneshot::Sender<Ack>),
    Snapshot(usize, oneshot::Sender<Option<Vec<u8>>>),
    Summary(oneshot::Sender<SessionSummary>),
}

/// Handle to a session's executor task.
#[derive(Clone)]
pub struct SessionHandle {
    pub id: String,
    tx: mpsc::Sender<Msg>,
    events: broadcast::Sender<EventEnvelope>,
    latest: watch::Receiver<EventEnvelope>,
}

#[derive(Debug, thiserror::Error)]
#[error("session {0} has shut down")]
pub struct Gone(pub String);

impl SessionHandle {
    async fn ask<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Msg) -> Result<T, Gone> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(make(tx)).await.map_err(|_| Gone(self.id.clone()))?;
        rx.await.map_err(|_| Gone(self.id.clone()))
    }

    pub async fn command(&self, cmd: Command) -> Result<Ack, Gone> {
        self.ask(|tx| Msg::Command(cmd, tx)).await
    }

    pub async fn import(&self, label: String, bytes: Vec<u8>) -> Result<Ack, Gone> {
        self.ask(|tx| Msg::Import(label, bytes, tx)).await
    }

    pub async fn snapshot(&self, index: usize) -> Result<Option<Vec<u8>>, Gone> {
        self.ask(|tx| Msg::Snapshot(index, tx)).await
    }

    pub async fn summary(&self) -> Result<SessionSummary, Gone> {
        self.ask(Msg::Summary).await
    }

    /// Live events, plus the latest full scene for a fresh or lagging subscriber.
    pub fn subscribe(&self) -> (EventEnvelope, broadcast::Receiver<EventEnvelope>) {
        let rx = self.events.subscribe();
        (self.latest.borrow().clone(), rx)
    }

    pub fn latest_scene(&self) -> EventEnvelope {
        self.latest.borrow().clone()
    }
}

struct Executor {
    id: String,
    session: Session,
    command_seq: u64,
    event_seq: u64,
    events: broadcast::Sender<EventEnvelope>,
    latest: watch::Sender<EventEnvelope>,
}

impl Executor {
    fn publish(&mut self, events: Vec<Event>) {
        let scene_changed = events.iter().any(|e| matches!(e, Event::SceneDelta(_)));
        for event in events {
            self.event_seq += 1;
            // no subscribers is fine
            let _ = self.events.send(EventEnvelope {
                version: SCHEMA_VERSION,
                session: self.id.clone(),
                seq: self.event_seq,
                event,
            });
        }
        if scene_changed {
            let full = EventEnvelope {
                version: SCHEMA_VERSION,
                session: self.id.clone(),
                seq: self.event_seq,
                event: Event::SceneDelta(self.session.scene(true)),
            };
            self.latest.send_replace(full);
        }
    }

    fn ack(&mut self, result: Result<Accepted, Rejection>) -> Ack {
        self.command_seq += 1;
        let (accepted, rejection) = match result {
            Ok(a) => (Some(a), None),
            Err(r) => (None, Some(r)),
        };
        Ack {
            version: SCHEMA_VERSION,
            session: self.id.clone(),
            seq: self.command_seq,
            ok: accepted.is_some(),
            accepted,
            rejection,
        }
    }

    fn handle(&mut self, msg: Msg) {
        match msg {
            Msg::Command(cmd, reply) => {
                let (result, events) = self.session.apply(cmd);
                let ack = self.ack(result);
                self.publish(events);
                let _ = reply.send(ack);
            }
            Msg::Import(label, bytes, reply) => {
                let result = if self.session.run_state() == RunState::Running {
                    Err(Rejection::new(RejectCode::NotPaused, "pause the session first"))
                } else {
                    self.session.import_snapshot(label, &bytes)
                };
                let (result, events) = match result {
                    Ok((info, ev)) => (Ok(Accepted::Saved(info)), ev),
                    Err(r) => (Err(r), Vec::new()),
                };
                let ack = self.ack(result);
                self.publish(events);
                let _ = reply.send(ack);
            }
            Msg::Snapshot(i, reply) => {
                let _ = reply.send(self.session.snapshot_bytes(i).map(<[u8]>::to_vec));
            }
            Msg::Summary(reply) => {
                let _ = reply.send(SessionSummary {
                    id: self.id.clone(),
                    seed: self.session.seed,
                    cycle: self.session.cycle(),
                    run_state: self.session.run_state(),
                    saved_states: self.session.saved_count(),
                    spec: self.session.spec.clone(),
                });
            }
        }
    }

    async fn run(mut self, mut rx: mpsc::Receiver<Msg>, tick_rate: f64) {
        let period = Duration::from_secs_f64(1.0 / tick_rate.max(1e-3));
        let mut clock = tokio::time::interval(period);
        clock.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                biased;
                msg = rx.recv() => match msg {
                    Some(m) => self.handle(m),
                    None => break,
                },
                _ = clock.tick(), if self.session.run_state() == RunState::Running => {
                    let events = self.session.tick();
                    self.publish(events);
                }
            }
        }
        log::debug!("session {} stopped", self.id);
    }
}

/// Live sessions keyed by id.
#[derive(Clone)]
pub struct Registry {
    config: Arc<ServiceConfig>,
    sessions: Arc<Mutex<BTreeMap<String, SessionHandle>>>,
    next: Arc<Mutex<u64>>,
}

impl Registry {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            config: Arc::new(config),
            sessions: Arc::default(),
            next: Arc::new(Mutex::new(1)),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    /// Builds a session and starts its executor on the current runtime.
    pub fn create(&self, spec: ScenarioSpec, seed: u64, tick_rate: Option<f64>) -> Result<SessionHandle, SessionError> {
        let (session, initial) = Session::create(spec, seed, self.config.base_dir.as_deref())?;
        let id = {
            let mut n = self.next.lock().expect("registry lock");
            let id = format!("s{:04}", *n);
            *n += 1;
            id
        };
        let (events, _) = broadcast::channel(self.config.event_buffer.max(1));
        let first = EventEnvelope {
            version: SCHEMA_VERSION,
            session: id.clone(),
            seq: 0,
            event: Event::SceneDelta(session.scene(true)),
        };
        let (latest_tx, latest_rx) = watch::channel(first);
        let (tx, rx) = mpsc::channel(64);
        let mut exec = Executor {
            id: id.clone(),
            session,
            command_seq: 0,
            event_seq: 0,
            events: events.clone(),
            latest: latest_tx,
        };
        exec.publish(initial);
        tokio::spawn(exec.run(rx, tick_rate.unwrap_or(self.config.tick_rate)));
        let handle = SessionHandle {
            id: id.clone(),
            tx,
            events,
            latest: latest_rx,
        };
        self.sessions.lock().expect("registry lock").insert(id, handle.clone());
        Ok(handle)
    }

    pub fn get(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.lock().expect("registry lock").get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.lock().expect("registry lock").keys().cloned().collect()
    }

    /// Removes a session; its executor stops once outstanding requests finish.
    pub fn remove(&self, id: &str) -> bool {
        self.sessions.lock().expect("registry lock").remove(id).is_some()
    }
}

#[cfg(test)]
mod tests;
