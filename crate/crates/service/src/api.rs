//! HTTP routes and the per-connection WebSocket loop.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::sync::broadcast::error::RecvError;

use crate::error::ServiceError;
use crate::protocol::{
    ClientMessage, ControlAction, CreateSession, ErrorBody, ErrorCode, ServerMessage, MESSAGE_SCHEMA, PROTOCOL_VERSION,
};
use crate::registry::Registry;
use crate::session::SessionRuntime;

/// Bundles carry a correction frame per reference sample and can be large.
const MAX_UPLOAD: usize = 512 * 1024 * 1024;

pub type AppState = Arc<Registry>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self.code() {
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::InvalidState | ErrorCode::NotRunning | ErrorCode::NotController => StatusCode::CONFLICT,
            ErrorCode::InvalidInput | ErrorCode::BadMessage => StatusCode::BAD_REQUEST,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ErrorBody {
            code: self.code(),
            error: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/schema", get(schema))
        .route("/api/v1/bundles", get(list_bundles).post(upload_bundle))
        .route("/api/v1/bundles/{id}", get(get_bundle))
        .route("/api/v1/scenarios", get(list_scenarios).post(upload_scenario))
        .route("/api/v1/sessions", get(list_sessions).post(create_session))
        .route("/api/v1/sessions/{id}", get(get_session))
        .route("/api/v1/sessions/{id}/log", get(session_log))
        .route("/api/v1/sessions/{id}/ws", get(session_ws))
        .route("/api/v1/sessions/{id}/{action}", post(control_session))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

async fn health() -> impl IntoResponse {
    Json(serde_json::json!({ "status": "ok", "protocol_version": PROTOCOL_VERSION }))
}

async fn schema() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/schema+json")], MESSAGE_SCHEMA)
}

fn utf8(body: &Bytes) -> Result<&str, ServiceError> {
    std::str::from_utf8(body).map_err(|_| ServiceError::BadMessage("body is not UTF-8".into()))
}

async fn list_bundles(State(reg): State<AppState>) -> impl IntoResponse {
    Json(reg.bundles())
}

async fn upload_bundle(State(reg): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ServiceError> {
    let entry = reg.add_bundle_text(utf8(&body)?)?;
    Ok((StatusCode::CREATED, Json(entry.summary())))
}

async fn get_bundle(State(reg): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(reg.bundle(&id)?.summary()))
}

async fn list_scenarios(State(reg): State<AppState>) -> impl IntoResponse {
    Json(reg.scenarios())
}

async fn upload_scenario(State(reg): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ServiceError> {
    let entry = reg.add_scenario_text(utf8(&body)?)?;
    Ok((StatusCode::CREATED, Json(entry.summary())))
}

async fn list_sessions(State(reg): State<AppState>) -> impl IntoResponse {
    Json(reg.sessions())
}

async fn create_session(State(reg): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ServiceError> {
    let req: CreateSession = serde_json::from_slice(&body).map_err(|e| ServiceError::BadMessage(e.to_string()))?;
    let rt = reg.create_session(&req)?;
    tokio::spawn(rt.clone().run());
    Ok((StatusCode::CREATED, Json(rt.summary())))
}

async fn get_session(State(reg): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(reg.session(&id)?.summary()))
}

async fn control_session(
    State(reg): State<AppState>,
    Path((id, action)): Path<(String, String)>,
) -> Result<impl IntoResponse, ServiceError> {
    let rt = reg.session(&id)?;
    let action: ControlAction = action.parse().map_err(ServiceError::BadMessage)?;
    rt.control(action)?;
    Ok(Json(rt.summary()))
}

async fn session_log(State(reg): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    let log = reg.session(&id)?.log();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], log.to_jsonl()))
}

#[derive(Debug, Deserialize)]
struct WsQuery {
    /// Replay retained telemetry from this tick before streaming live.
    from_tick: Option<u64>,
}

async fn session_ws(
    State(reg): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<WsQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ServiceError> {
    let rt = reg.session(&id)?;
    let client = reg.next_client_id();
    Ok(ws.on_upgrade(move |socket| connection(socket, rt, client, q.from_tick)))
}

fn text(msg: &ServerMessage) -> Message {
    Message::Text(serde_json::to_string(msg).expect("messages serialize").into())
}

fn error_message(e: &ServiceError) -> ServerMessage {
    ServerMessage::Error {
        code: e.code(),
        message: e.to_string(),
    }
}

fn handle_client(rt: &SessionRuntime, client: u64, raw: &str) -> ServerMessage {
    let msg: ClientMessage = match serde_json::from_str(raw) {
        Ok(m) => m,
        Err(e) => return error_message(&ServiceError::BadMessage(e.to_string())),
    };
    match msg {
        ClientMessage::Input { d, reverse, client_time } => match rt.submit_input(client, d, reverse, client_time) {
            Ok(outcome) => ServerMessage::Ack { client_time, outcome },
            Err(e) => error_message(&e),
        },
        ClientMessage::Control { action } => match rt.control(action) {
            Ok(_) => ServerMessage::Status { session: rt.summary() },
            Err(e) => error_message(&e),
        },
    }
}

async fn connection(mut socket: WebSocket, rt: Arc<SessionRuntime>, client: u64, from_tick: Option<u64>) {
    let (backlog, mut rx) = rt.subscribe(from_tick);
    if socket.send(text(&rt.hello(client))).await.is_err() {
        return;
    }
    let mut last_tick = None;
    for out in backlog {
        last_tick = out.tick.or(last_tick);
        if socket.send(Message::Text(out.text.as_ref().into())).await.is_err() {
            rt.release(client);
            return;
        }
    }
    loop {
        tokio::select! {
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(raw))) => {
                    let reply = handle_client(&rt, client, raw.as_str());
                    if socket.send(text(&reply)).await.is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            out = rx.recv() => match out {
                Ok(out) => {
                    if out.tick.is_some() && out.tick <= last_tick {
                        continue;
                    }
                    if socket.send(Message::Text(out.text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Err(RecvError::Lagged(missed)) => {
                    if socket.send(text(&ServerMessage::Lagged { missed })).await.is_err() {
                        break;
                    }
                }
                Err(RecvError::Closed) => break,
            },
        }
    }
    rt.release(client);
}
