use std::path::Path;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use viewnav_core::protocol::{Body, WireMessage};
use viewnav_core::roadmap::Roadmap;
use viewnav_core::session::replay;
use viewnav_core::RunConfig;
use viewnav_gateway::server::{self, ServeOptions, Server};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn start(opts: ServeOptions) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    server::start(RunConfig::ideal(), listener, opts)
        .await
        .unwrap()
}

async fn connect(server: &Server) -> Ws {
    let (ws, _) = connect_async(format!("ws://{}/ops", server.local_addr()))
        .await
        .unwrap();
    ws
}

struct Client {
    ws: Ws,
    seq: u64,
    last_seq_in: u64,
}

impl Client {
    async fn new(server: &Server) -> Self {
        Self {
            ws: connect(server).await,
            seq: 0,
            last_seq_in: 0,
        }
    }

    async fn send(&mut self, kind: &str, payload: Option<Value>) -> u64 {
        self.seq += 1;
        let mut msg = json!({"protocol_version": 1, "seq": self.seq, "kind": kind});
        if let Some(p) = payload {
            msg["payload"] = p;
        }
        self.ws
            .send(Message::Text(msg.to_string().into()))
            .await
            .unwrap();
        self.seq
    }

    async fn send_raw(&mut self, text: &str) {
        self.ws
            .send(Message::Text(text.to_owned().into()))
            .await
            .unwrap();
    }

    async fn next(&mut self) -> WireMessage {
        loop {
            let msg = tokio::time::timeout(Duration::from_secs(10), self.ws.next())
                .await
                .expect("message within 10 s")
                .expect("stream open")
                .unwrap();
            if let Message::Text(t) = msg {
                let m = WireMessage::parse(t.as_str()).expect("server messages follow the schema");
                assert!(m.seq > self.last_seq_in, "outbound seq must increase");
                self.last_seq_in = m.seq;
                return m;
            }
        }
    }

    /// Reads until `pred` matches, returning the match.
    async fn until(&mut self, mut pred: impl FnMut(&Body) -> bool) -> Body {
        loop {
            let m = self.next().await;
            if pred(&m.body) {
                return m.body;
            }
        }
    }

    async fn error(&mut self) -> (String, String, Option<u64>) {
        match self.until(|b| matches!(b, Body::Error(_))).await {
            Body::Error(e) => (e.code, e.message, e.in_reply_to),
            _ => unreachable!(),
        }
    }

    async fn jog(&mut self, rates: [f64; 4], secs: f64) {
        let sends = (secs * 20.0).round() as usize;
        for _ in 0..sends {
            self.send("jog_knob", Some(json!({"rates": rates}))).await;
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        self.send("jog_knob", Some(json!({"rates": [0.0, 0.0, 0.0, 0.0]})))
            .await;
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
}

async fn http_get(server: &Server, path: &str) -> (u16, Value) {
    let mut s = TcpStream::connect(server.local_addr()).await.unwrap();
    let req = format!("GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n");
    s.write_all(req.as_bytes()).await.unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    let (head, body) = buf.split_once("\r\n\r\n").unwrap();
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    (status, serde_json::from_str(body).unwrap_or(Value::Null))
}

#[tokio::test(flavor = "multi_thread")]
async fn save_before_motion_reports_empty_roadmap() {
    let server = start(ServeOptions::default()).await;
    let mut c = Client::new(&server).await;
    let seq = c.send("save_view", Some(json!({"label": "AV"}))).await;
    let (code, message, reply_to) = c.error().await;
    assert_eq!(code, "rejected");
    assert_eq!(message, "empty roadmap");
    assert_eq!(reply_to, Some(seq));
    // the connection is still usable
    c.send("cancel", None).await;
    c.until(|b| matches!(b, Body::Telemetry(_))).await;
    server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn recovery_passes_through_every_mode() {
    let server = start(ServeOptions::default()).await;
    let mut c = Client::new(&server).await;
    c.jog([10.0, 5.0, 0.0, 4.0], 0.5).await;
    c.send("save_view", Some(json!({"label": "AV"}))).await;
    let views = c
        .until(|b| matches!(b, Body::ViewList { views } if !views.is_empty()))
        .await;
    assert!(
        matches!(&views, Body::ViewList { views } if views.len() == 1 && views[0].label == "AV")
    );
    c.jog([-10.0, 10.0, 15.0, 0.0], 0.5).await;

    let recover_seq = c.send("recover_view", Some(json!({"label": "AV"}))).await;
    let mut modes = Vec::new();
    let mut acked = false;
    loop {
        if let Body::Telemetry(t) = c.next().await.body {
            acked |= t.ack_seq >= recover_seq;
            if acked && modes.last() != Some(&t.mode.as_str()) {
                modes.push(t.mode.as_str());
            }
            if t.mode.as_str() == "completed" {
                assert_eq!(t.active_view.as_ref().unwrap().label, "AV");
                break;
            }
        }
    }
    assert_eq!(modes, ["search", "execution", "completed"]);

    let (status, views) = http_get(&server, "/views").await;
    assert_eq!(status, 200);
    assert_eq!(views[0]["label"], "AV");
    assert_eq!(views[0]["configuration"].as_array().unwrap().len(), 4);
    let (_, stats) = http_get(&server, "/roadmap/stats").await;
    assert_eq!(stats["view_count"], 1);
    assert!(stats["vertex_count"].as_u64().unwrap() > 10);
    let (_, health) = http_get(&server, "/health").await;
    assert_eq!(health["status"], "ok");
    assert_eq!(health["mode"], "completed");
    server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn second_operator_is_refused_but_observes() {
    let server = start(ServeOptions::default()).await;
    let mut op = Client::new(&server).await;
    let mut viewer = Client::new(&server).await;
    op.jog([10.0, 0.0, 0.0, 0.0], 0.2).await;
    let seq = viewer
        .send("jog_knob", Some(json!({"rates": [5.0, 0.0, 0.0, 0.0]})))
        .await;
    let (code, _, reply_to) = viewer.error().await;
    assert_eq!((code.as_str(), reply_to), ("not_authorized", Some(seq)));
    viewer.until(|b| matches!(b, Body::Telemetry(_))).await;

    // authority passes on once the operator leaves
    drop(op);
    tokio::time::sleep(Duration::from_millis(200)).await;
    viewer.send("save_view", Some(json!({"label": "MV"}))).await;
    viewer
        .until(|b| matches!(b, Body::ViewList { views } if !views.is_empty()))
        .await;
    server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_input_is_answered_not_fatal() {
    let server = start(ServeOptions::default()).await;
    let mut c = Client::new(&server).await;
    c.send_raw(r#"{"protocol_version":1,"seq":3,"kind":"self_destruct","payload":{}}"#)
        .await;
    assert_eq!(c.error().await.0, "unknown_kind");
    c.send_raw("{{{").await;
    assert_eq!(c.error().await.0, "malformed");
    c.send_raw(r#"{"protocol_version":7,"seq":4,"kind":"cancel"}"#)
        .await;
    assert_eq!(c.error().await.0, "unsupported_version");
    c.send("view_list", Some(json!({"views": []}))).await;
    assert_eq!(c.error().await.0, "not_a_command");
    c.send("jog_knob", Some(json!({"rates": [1.0]}))).await;
    assert_eq!(c.error().await.0, "malformed");
    let (status, _) = http_get(&server, "/health").await;
    assert_eq!(status, 200);
    server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn recorded_session_replays_to_identical_roadmap() {
    let dir = tempfile::tempdir().unwrap();
    let (log, map) = (
        dir.path().join("session.jsonl"),
        dir.path().join("roadmap.json"),
    );
    let server = start(ServeOptions {
        session_log: Some(log.clone()),
        roadmap_out: Some(map.clone()),
        ..Default::default()
    })
    .await;
    let mut c = Client::new(&server).await;
    c.jog([12.0, -6.0, 8.0, 3.0], 0.4).await;
    c.send("save_view", Some(json!({"label": "TV"}))).await;
    c.jog([0.0, 15.0, -10.0, 5.0], 0.4).await;
    c.send("recover_view", Some(json!({"label": "TV"}))).await;
    c.until(|b| matches!(b, Body::Telemetry(t) if t.mode.as_str() == "completed"))
        .await;
    let live = server.shutdown().await.unwrap();

    let saved = std::fs::read_to_string(&map).unwrap();
    assert_eq!(saved, live.to_json_string());
    let out = replay(
        std::io::BufReader::new(std::fs::File::open(&log).unwrap()),
        None,
    )
    .unwrap();
    assert_eq!(out.roadmap.to_json_string(), saved);
    assert_eq!(out.outcomes.len(), 1);
    assert_eq!(
        Roadmap::load_json(saved.as_bytes()).unwrap().stats(),
        live.stats()
    );
    cli_replay_matches(&log, &saved);
}

fn cli_replay_matches(log: &Path, saved: &str) {
    let dir = tempfile::tempdir().unwrap();
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_viewnav"))
        .arg("replay")
        .arg(log)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        std::fs::read_to_string(dir.path().join("roadmap.json")).unwrap(),
        saved
    );
    let traj = std::fs::read_to_string(dir.path().join("trajectory.jsonl")).unwrap();
    let first: Value = serde_json::from_str(traj.lines().next().unwrap()).unwrap();
    for key in ["tick", "mode", "current_q", "actual_q", "em_sample"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    assert!(dir.path().join("report.txt").exists());

    let export = dir.path().join("exported.json");
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_viewnav"))
        .args(["export-roadmap"])
        .arg(log)
        .arg("--out")
        .arg(&export)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(std::fs::read_to_string(export).unwrap(), saved);
}
