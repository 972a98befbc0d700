use super::{Ack, EventEnvelope, Registry, ServiceConfig, SessionError, SCHEMA_VERSION};
use crate::scenario::{PolicySource, ScenarioSpec};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use tokio::sync::broadcast::error::RecvError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub spec: ScenarioSpec,
    #[serde(default)]
    pub seed: u64,
    /// Trained parameter file; overrides the scenario's policy source.
    #[serde(default)]
    pub params_path: Option<PathBuf>,
    #[serde(default)]
    pub tick_rate: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Created {
    version: u32,
    id: String,
    scene: EventEnvelope,
}

#[derive(Debug, Deserialize)]
struct ImportQuery {
    #[serde(default)]
    label: Option<String>,
}

fn error(status: StatusCode, code: &str, message: impl std::fmt::Display) -> Response {
    let body = json!({
        "version": SCHEMA_VERSION,
        "error": { "code": code, "message": message.to_string() },
    });
    (status, Json(body)).into_response()
}

fn not_found(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}"))
}

fn ack_response(ack: Ack) -> Response {
    let status = if ack.ok { StatusCode::OK } else { StatusCode::CONFLICT };
    (status, Json(ack)).into_response()
}

/// Routes under `/v1/sessions`.
pub fn router(registry: Registry) -> Router {
    Router::new()
        .route("/v1/sessions", post(create).get(list))
        .route("/v1/sessions/{id}", get(show).delete(remove))
        .route("/v1/sessions/{id}/commands", post(command))
        .route("/v1/sessions/{id}/events", get(events))
        .route("/v1/sessions/{id}/snapshots", post(import))
        .route("/v1/sessions/{id}/snapshots/{index}", get(export))
        .with_state(registry)
}

async fn create(State(reg): State<Registry>, body: Bytes) -> Response {
    let req: CreateSession = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", e),
    };
    let mut spec = req.spec;
    if let Some(path) = req.params_path {
        spec.policy = PolicySource::Trained { path };
    }
    match reg.create(spec, req.seed, req.tick_rate) {
        Ok(h) => {
            let scene = h.latest_scene();
            (
                StatusCode::CREATED,
                Json(Created {
                    version: SCHEMA_VERSION,
                    id: h.id,
                    scene,
                }),
            )
                .into_response()
        }
        Err(e) => {
            let code = match e {
                SessionError::Spec(_) => "invalid_spec",
                SessionError::Controller(_) => "invalid_params",
                SessionError::Env(_) => "invalid_spec",
            };
            error(StatusCode::UNPROCESSABLE_ENTITY, code, e)
        }
    }
}

async fn list(State(reg): State<Registry>) -> Response {
    let mut sessions = Vec::new();
    for id in reg.ids() {
        if let Some(h) = reg.get(&id) {
            if let Ok(s) = h.summary().await {
                sessions.push(s);
            }
        }
    }
    Json(json!({ "version": SCHEMA_VERSION, "sessions": sessions })).into_response()
}

async fn show(State(reg): State<Registry>, Path(id): Path<String>) -> Response {
    let Some(h) = reg.get(&id) else { return not_found(&id) };
    match h.summary().await {
        Ok(s) => Json(json!({ "version": SCHEMA_VERSION, "session": s })).into_response(),
        Err(_) => not_found(&id),
    }
}

async fn remove(State(reg): State<Registry>, Path(id): Path<String>) -> Response {
    if reg.remove(&id) {
        StatusCode::NO_CONTENT.into_response()
    } else {
        not_found(&id)
    }
}

async fn command(State(reg): State<Registry>, Path(id): Path<String>, body: Bytes) -> Response {
    let Some(h) = reg.get(&id) else { return not_found(&id) };
    let cmd = match serde_json::from_slice(&body) {
        Ok(c) => c,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_command", e),
    };
    match h.command(cmd).await {
        Ok(ack) => ack_response(ack),
        Err(_) => not_found(&id),
    }
}

async fn import(
    State(reg): State<Registry>,
    Path(id): Path<String>,
    Query(q): Query<ImportQuery>,
    body: Bytes,
) -> Response {
    let Some(h) = reg.get(&id) else { return not_found(&id) };
    match h
        .import(q.label.unwrap_or_else(|| "imported".into()), body.to_vec())
        .await
    {
        Ok(ack) => ack_response(ack),
        Err(_) => not_found(&id),
    }
}

async fn export(State(reg): State<Registry>, Path((id, index)): Path<(String, usize)>) -> Response {
    let Some(h) = reg.get(&id) else { return not_found(&id) };
    match h.snapshot(index).await {
        Ok(Some(bytes)) => ([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response(),
        Ok(None) => error(StatusCode::NOT_FOUND, "out_of_range", format!("no saved state {index}")),
        Err(_) => not_found(&id),
    }
}

fn sse_event(env: &EventEnvelope) -> SseEvent {
    let name = match &env.event {
        super::Event::SceneDelta(_) => "scene_delta",
        super::Event::StateSaved(_) => "state_saved",
        super::Event::ExplanationReady(_) => "explanation_ready",
        super::Event::Info(_) => "info",
        super::Event::Terminal { .. } => "terminal",
    };
    SseEvent::default()
        .event(name)
        .id(env.seq.to_string())
        .data(serde_json::to_string(env).expect("event serializes"))
}

async fn events(State(reg): State<Registry>, Path(id): Path<String>) -> Response {
    let Some(h) = reg.get(&id) else { return not_found(&id) };
    let (first, rx) = h.subscribe();
    let stream = event_stream(h, first, rx);
    Sse::new(stream).keep_alive(KeepAlive::default()).into_response()
}

/// Starts with the latest full scene; a subscriber that falls behind skips to the latest scene.
fn event_stream(
    handle: super::SessionHandle,
    first: EventEnvelope,
    rx: tokio::sync::broadcast::Receiver<EventEnvelope>,
) -> impl Stream<Item = Result<SseEvent, Infallible>> {
    stream::unfold(
        (Some(first), rx, handle.latest),
        |(pending, mut rx, latest)| async move {
            if let Some(p) = pending {
                return Some((Ok(sse_event(&p)), (None, rx, latest)));
            }
            match rx.recv().await {
                Ok(env) => Some((Ok(sse_event(&env)), (None, rx, latest))),
                Err(RecvError::Lagged(n)) => {
                    log::debug!("subscriber lagged by {n} events");
                    let snap = latest.borrow().clone();
                    let rx = rx.resubscribe();
                    Some((Ok(sse_event(&snap)), (None, rx, latest)))
                }
                Err(RecvError::Closed) => None,
            }
        },
    )
}

/// Serves the API until ctrl-c.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Registry::new(config)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
