//! Gateway HTTP and WebSocket API.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use futures::StreamExt;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use tickwrap_core::eventlog::{EventKind, Record};
use tickwrap_core::wrapper::Observer;
use tickwrap_core::{LogicalTime, Rational};
use tickwrap_harness::checks::load_scenario;
use tickwrap_harness::gateway::{self, command_payload, Forward, Gateway};
use tickwrap_net::physical::{PhysicalOptions, PhysicalRig};

async fn call(app: axum::Router, method: &str, uri: &str, body: &str) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

type Sent = Arc<Mutex<Vec<(SocketAddr, String)>>>;

fn recording() -> (Forward, Sent) {
    let sent = Arc::new(Mutex::new(Vec::new()));
    let s = sent.clone();
    let f: Forward = Arc::new(move |addr, p| {
        s.lock().unwrap().push((addr, p));
        Ok(())
    });
    (f, sent)
}

fn record(i: u32) -> Record {
    Record {
        t: LogicalTime::from_int(i),
        wall_ms: f64::from(i),
        kind: EventKind::Request,
        detail: json!({ "i": i }),
    }
}

#[test]
fn payloads() {
    let g = Rational::from_integer(10);
    assert_eq!(command_payload(br#"{"action":"bolus"}"#, g).unwrap(), "set-mode bolus");
    assert_eq!(command_payload(br#"{"action":"set-rate","bpm":80}"#, g).unwrap(), "set-period 75");
    assert!(command_payload(br#"{"action":"set-rate","bpm":0}"#, g).is_err());
    assert!(command_payload(br#"{"action":"explode"}"#, g).is_err());
    assert!(command_payload(b"not json", g).is_err());
}

#[tokio::test]
async fn idle_gateway_refuses() {
    let gw = Arc::new(Gateway::new());
    let (f, sent) = recording();
    let app = gateway::router_with(gw, f);
    assert_eq!(call(app.clone(), "GET", "/state", "").await.0, StatusCode::CONFLICT);
    assert_eq!(call(app.clone(), "POST", "/command", r#"{"action":"bolus"}"#).await.0, StatusCode::CONFLICT);
    assert_eq!(call(app, "POST", "/command", "{").await.0, StatusCode::BAD_REQUEST);
    assert!(sent.lock().unwrap().is_empty());
}

#[tokio::test]
async fn active_run_forwards_and_pages() {
    let gw = Arc::new(Gateway::new());
    let cfg = load_scenario("pacemaker").unwrap();
    let intr: SocketAddr = "127.0.0.1:4445".parse().unwrap();
    gw.begin(&cfg, Some(intr));
    for i in 0..1500 {
        gw.record(&record(i));
    }
    let (f, sent) = recording();
    let app = gateway::router_with(gw, f);

    let (st, v) = call(app.clone(), "POST", "/command", r#"{"action":"set-rate","bpm":120}"#).await;
    assert_eq!(st, StatusCode::ACCEPTED);
    assert_eq!(v["payload"], "set-period 50");
    assert_eq!(*sent.lock().unwrap(), vec![(intr, "set-period 50".to_string())]);

    let (st, v) = call(app.clone(), "GET", "/state", "").await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["scenario"], "pacemaker");
    assert_eq!(v["records"], 1500);

    let (_, page) = call(app.clone(), "GET", "/log", "").await;
    assert_eq!(page["next"], 1000);
    assert_eq!(page["records"].as_array().unwrap().len(), 1000);
    let (_, rest) = call(app, "GET", "/log?since=1000", "").await;
    assert_eq!(rest["next"], 1500);
    assert_eq!(rest["records"][0]["detail"]["i"], 1000);
}

#[tokio::test]
async fn websocket_streams_records() {
    let gw = Arc::new(Gateway::new());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = gateway::router(gw.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/events")).await.unwrap();
    // the subscription exists once the upgrade completes; retry until seen
    let got = tokio::time::timeout(Duration::from_secs(5), async {
        loop {
            gw.record(&record(7));
            if let Ok(Some(Ok(m))) = tokio::time::timeout(Duration::from_millis(50), ws.next()).await {
                return m;
            }
        }
    })
    .await
    .unwrap();
    let v: Value = serde_json::from_str(got.to_text().unwrap()).unwrap();
    assert_eq!(v["detail"]["i"], 7);
    assert_eq!(v["kind"], "request");
}

#[test]
fn bolus_reaches_a_physical_run() {
    let mut cfg = load_scenario("pump").unwrap();
    cfg.grain_ms = Rational::from_integer(25);
    cfg.horizon = LogicalTime::from_int(40);
    cfg.flood = None;
    cfg.stimulus.clear();
    let gw = Arc::new(Gateway::new());
    let opts = PhysicalOptions {
        ephemeral_ports: true,
        observer: Some(gw.clone()),
        ..Default::default()
    };
    let rig = PhysicalRig::start(&cfg, opts).unwrap();
    gw.begin(rig.config(), Some(rig.interrupt_addr()));
    let runner = std::thread::spawn(move || rig.run());

    let rt = tokio::runtime::Runtime::new().unwrap();
    let (st, _) = rt.block_on(call(gateway::router(gw.clone()), "POST", "/command", r#"{"action":"bolus"}"#));
    assert_eq!(st, StatusCode::ACCEPTED);

    let run = runner.join().unwrap().unwrap();
    gw.end();
    assert!(run.error.is_none(), "{:?}", run.error);
    let seen: Vec<Record> = gw.records().into_iter().filter(|r| r.kind == EventKind::Interrupt).collect();
    assert_eq!(seen.len(), 1, "{seen:?}");
    assert_eq!(seen[0].detail["payload"], "set-mode bolus");
    assert_eq!(run.log.of_kind(EventKind::Interrupt).count(), 1);
    assert!(!gw.is_active());
}
