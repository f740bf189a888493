//! HTTP/WebSocket backend for the operator console.
//!
//! Reads run state through an [`Observer`] and writes only to the tick
//! server's interrupt port.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value as JsonValue};
use tokio::sync::broadcast;

use tickwrap_core::eventlog::Record;
use tickwrap_core::scenario::ScenarioConfig;
use tickwrap_core::wrapper::Observer;
use tickwrap_core::{Configuration, LogicalTime, Rational};
use tickwrap_net::heart::{rate_payload, send_interrupt_retry};

const LOG_PAGE: usize = 1000;

#[derive(Default)]
struct Live {
    active: bool,
    scenario: Option<ScenarioConfig>,
    interrupt: Option<SocketAddr>,
    t: LogicalTime,
    shaper: Option<JsonValue>,
    records: Vec<Record>,
}

/// Shared between the wrapper thread (as observer) and the HTTP server.
pub struct Gateway {
    live: Mutex<Live>,
    events: broadcast::Sender<Record>,
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new()
    }
}

impl Gateway {
    pub fn new() -> Self {
        Gateway {
            live: Mutex::new(Live::default()),
            events: broadcast::channel(4096).0,
        }
    }

    /// Mark a run as active; commands go to `interrupt` when given.
    pub fn begin(&self, scenario: &ScenarioConfig, interrupt: Option<SocketAddr>) {
        let mut l = self.live.lock().expect("gateway state");
        *l = Live {
            active: true,
            scenario: Some(scenario.clone()),
            interrupt,
            ..Live::default()
        };
    }

    pub fn end(&self) {
        self.live.lock().expect("gateway state").active = false;
    }

    pub fn is_active(&self) -> bool {
        self.live.lock().expect("gateway state").active
    }

    pub fn records(&self) -> Vec<Record> {
        self.live.lock().expect("gateway state").records.clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Record> {
        self.events.subscribe()
    }
}

impl Observer for Gateway {
    fn record(&self, r: &Record) {
        self.live.lock().expect("gateway state").records.push(r.clone());
        let _ = self.events.send(r.clone());
    }

    fn state(&self, t: LogicalTime, config: &Configuration) {
        let mut l = self.live.lock().expect("gateway state");
        l.t = t;
        l.shaper = l.scenario.as_ref().and_then(|s| s.snapshot(config));
    }
}

/// Forwards a command payload; replaced in tests.
pub type Forward = Arc<dyn Fn(SocketAddr, String) -> std::io::Result<()> + Send + Sync>;

#[derive(Clone)]
struct AppState {
    gw: Arc<Gateway>,
    forward: Forward,
}

pub fn router(gw: Arc<Gateway>) -> Router {
    router_with(gw, Arc::new(|addr, payload: String| send_interrupt_retry(addr, &payload)))
}

pub fn router_with(gw: Arc<Gateway>, forward: Forward) -> Router {
    Router::new()
        .route("/state", get(get_state))
        .route("/log", get(get_log))
        .route("/events", get(events))
        .route("/command", post(command))
        .with_state(AppState { gw, forward })
}

fn error(status: StatusCode, msg: &str) -> Response {
    (status, Json(json!({ "error": msg }))).into_response()
}

async fn get_state(State(s): State<AppState>) -> Response {
    let l = s.gw.live.lock().expect("gateway state");
    if !l.active {
        return error(StatusCode::CONFLICT, "no active run");
    }
    Json(json!({
        "scenario": l.scenario.as_ref().map(|c| c.name.clone()),
        "t": l.t,
        "shaper": l.shaper,
        "records": l.records.len(),
    }))
    .into_response()
}

#[derive(Deserialize)]
struct Since {
    since: Option<usize>,
}

async fn get_log(State(s): State<AppState>, Query(q): Query<Since>) -> Response {
    let l = s.gw.live.lock().expect("gateway state");
    let from = q.since.unwrap_or(0).min(l.records.len());
    let to = (from + LOG_PAGE).min(l.records.len());
    Json(json!({ "next": to, "records": &l.records[from..to] })).into_response()
}

async fn events(State(s): State<AppState>, ws: WebSocketUpgrade) -> Response {
    let rx = s.gw.subscribe();
    ws.on_upgrade(move |socket| stream_events(socket, rx))
}

async fn stream_events(mut socket: WebSocket, mut rx: broadcast::Receiver<Record>) {
    loop {
        match rx.recv().await {
            Ok(r) => {
                let text = serde_json::to_string(&r).unwrap_or_default();
                if socket.send(WsMessage::Text(text.into())).await.is_err() {
                    return;
                }
            }
            Err(broadcast::error::RecvError::Lagged(n)) => log::warn!("websocket client lagged by {n} records"),
            Err(broadcast::error::RecvError::Closed) => return,
        }
    }
}

#[derive(Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
enum Command {
    Bolus,
    SetRate { bpm: f64 },
}

/// Interrupt payload for a console command.
pub fn command_payload(body: &[u8], grain_ms: Rational) -> Result<String, String> {
    let cmd: Command = serde_json::from_slice(body).map_err(|e| e.to_string())?;
    match cmd {
        Command::Bolus => Ok("set-mode bolus".to_string()),
        Command::SetRate { bpm } => {
            let bpm = Rational::approximate_float(bpm)
                .filter(|b| *b > Rational::from_integer(0))
                .ok_or_else(|| format!("bpm must be positive, got {bpm}"))?;
            Ok(rate_payload(bpm, grain_ms))
        }
    }
}

async fn command(State(s): State<AppState>, body: Bytes) -> Response {
    let (target, grain) = {
        let l = s.gw.live.lock().expect("gateway state");
        let grain = l.scenario.as_ref().map(|c| c.grain_ms);
        (l.interrupt.filter(|_| l.active), grain)
    };
    let payload = match command_payload(&body, grain.unwrap_or(Rational::from_integer(1))) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, &e),
    };
    let (Some(addr), Some(_)) = (target, grain) else {
        return error(StatusCode::CONFLICT, "no active run");
    };
    let forward = s.forward.clone();
    let p = payload.clone();
    match tokio::task::spawn_blocking(move || forward(addr, p)).await {
        Ok(Ok(())) => (StatusCode::ACCEPTED, Json(json!({ "payload": payload }))).into_response(),
        Ok(Err(e)) => error(StatusCode::BAD_GATEWAY, &e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, &e.to_string()),
    }
}

/// Serve the gateway on a background runtime; returns the bound address.
pub fn spawn(gw: Arc<Gateway>, addr: SocketAddr) -> std::io::Result<(SocketAddr, std::thread::JoinHandle<()>)> {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
    let bound = listener.local_addr()?;
    let handle = std::thread::spawn(move || {
        rt.block_on(async move {
            if let Err(e) = axum::serve(listener, router(gw)).await {
                log::error!("gateway: {e}");
            }
        })
    });
    Ok((bound, handle))
}
