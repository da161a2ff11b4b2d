//! HTTP and WebSocket transport for steerable rollout sessions.
//!
//! Routes:
//! * `GET /` and `GET /{*path}`: static UI assets (an embedded placeholder
//!   page when no asset directory is configured)
//! * `GET /api/info`: checkpoint id, environment spec, protocol version
//! * `GET /ws`: one rollout session per connection

use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use d3po_core::serve::{Outbound, SessionState, PROTOCOL_VERSION};
use d3po_core::trainer::PolicySnapshot;
use d3po_core::{EnvConfig, Result};

const PLACEHOLDER_INDEX: &str = r#"<!doctype html>
<html><head><meta charset="utf-8"><title>d3po serve</title></head>
<body>
<h1>d3po rollout server</h1>
<p>No UI assets configured. Start with <code>--assets &lt;dir&gt;</code> to serve a front end.</p>
<p>WebSocket endpoint: <code>/ws</code>. Session metadata: <code>/api/info</code>.</p>
</body></html>
"#;

/// Everything a connection needs to start its own session.
pub struct ServeContext {
    pub policy: PolicySnapshot,
    pub env: EnvConfig,
    pub checkpoint_id: String,
    pub assets: Option<PathBuf>,
}

impl ServeContext {
    /// Validates the policy against the environment before any client
    /// connects.
    pub fn new(policy: PolicySnapshot, env: EnvConfig, checkpoint_id: String, assets: Option<PathBuf>) -> Result<Self> {
        let probe = env.build()?;
        policy.check_compatible(probe.spec())?;
        Ok(Self {
            policy,
            env,
            checkpoint_id,
            assets,
        })
    }

    pub fn session(&self) -> Result<SessionState> {
        SessionState::new(self.policy.clone(), self.env.build()?, self.checkpoint_id.clone())
    }
}

pub fn router(ctx: Arc<ServeContext>) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/api/info", get(info))
        .route("/ws", get(ws_upgrade))
        .route("/{*path}", get(asset))
        .with_state(ctx)
}

async fn index(State(ctx): State<Arc<ServeContext>>) -> Response {
    match &ctx.assets {
        Some(dir) => serve_file(&dir.join("index.html")).await,
        None => Html(PLACEHOLDER_INDEX).into_response(),
    }
}

async fn info(State(ctx): State<Arc<ServeContext>>) -> Response {
    match ctx.env.build() {
        Ok(env) => Json(serde_json::json!({
            "v": PROTOCOL_VERSION,
            "checkpoint": ctx.checkpoint_id,
            "env": env.spec(),
        }))
        .into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

/// Rejects absolute paths and any `..` component.
fn safe_join(root: &Path, rel: &str) -> Option<PathBuf> {
    let rel = Path::new(rel);
    if rel.components().all(|c| matches!(c, Component::Normal(_))) {
        Some(root.join(rel))
    } else {
        None
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") | Some("mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

async fn serve_file(path: &Path) -> Response {
    match tokio::fs::read(path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(path))], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

async fn asset(State(ctx): State<Arc<ServeContext>>, UrlPath(path): UrlPath<String>) -> Response {
    let Some(dir) = &ctx.assets else {
        return StatusCode::NOT_FOUND.into_response();
    };
    match safe_join(dir, &path) {
        Some(p) => serve_file(&p).await,
        None => StatusCode::BAD_REQUEST.into_response(),
    }
}

async fn ws_upgrade(State(ctx): State<Arc<ServeContext>>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| run_session(ctx, socket))
}

fn tick_period(hz: f64) -> Duration {
    Duration::from_secs_f64(1.0 / hz)
}

/// Owns one session: applies inbound frames between ticks and emits one
/// message per tick until the client disconnects.
pub async fn run_session(ctx: Arc<ServeContext>, mut socket: WebSocket) {
    let mut session = match ctx.session() {
        Ok(s) => s,
        Err(e) => {
            let _ = socket.send(Message::Text(Outbound::error(e.to_string()).to_json().into())).await;
            return;
        }
    };
    let mut hz = session.tick_hz();
    let mut ticker = tokio::time::interval(tick_period(hz));
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let reply = match incoming {
                    Some(Ok(Message::Text(text))) => session.handle_text(text.as_str()),
                    Some(Ok(Message::Binary(_))) => Some(Outbound::error("binary frames are not supported")),
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => None,
                };
                if let Some(msg) = reply {
                    if socket.send(Message::Text(msg.to_json().into())).await.is_err() {
                        break;
                    }
                }
                if session.tick_hz() != hz {
                    hz = session.tick_hz();
                    ticker = tokio::time::interval(tick_period(hz));
                    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
                }
            }
            _ = ticker.tick() => {
                if let Some(msg) = session.tick() {
                    if socket.send(Message::Text(msg.to_json().into())).await.is_err() {
                        break;
                    }
                }
            }
        }
    }
}
