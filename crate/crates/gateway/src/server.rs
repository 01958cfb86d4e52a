//! Operator-facing service: WebSocket `/ops` plus a few read-only HTTP
//! endpoints, in front of a control loop running on its own thread.

use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::Context;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, oneshot, watch};

use viewnav_core::controller::{Mode, SearchPolicy};
use viewnav_core::protocol::{Body, Command, ErrorPayload, Telemetry, WireMessage};
use viewnav_core::roadmap::{Roadmap, RoadmapStats, ViewBookmark};
use viewnav_core::session::Engine;
use viewnav_core::{Configuration, RunConfig};

const BROADCAST_CAPACITY: usize = 64;

#[derive(Default)]
pub struct ServeOptions {
    /// Session log destination.
    pub session_log: Option<PathBuf>,
    /// Where the roadmap is written on shutdown.
    pub roadmap_out: Option<PathBuf>,
    pub search_policy: SearchPolicy,
}

struct Inbound {
    seq: u64,
    command: Command,
    reply: oneshot::Sender<Result<(), String>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ViewEntry {
    #[serde(flatten)]
    pub bookmark: ViewBookmark,
    pub configuration: Configuration,
}

#[derive(Debug, Clone, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub tick: u64,
    pub mode: Mode,
    pub operator_connected: bool,
}

struct Snapshot {
    views: Vec<ViewEntry>,
    stats: RoadmapStats,
    telemetry: Telemetry,
}

#[derive(Clone)]
struct AppState {
    commands: mpsc::Sender<Inbound>,
    bus: broadcast::Sender<Arc<Body>>,
    snapshot: Arc<RwLock<Snapshot>>,
    operator: Arc<Mutex<Option<u64>>>,
    next_conn: Arc<AtomicU64>,
}

pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    http_shutdown: watch::Sender<bool>,
    http: tokio::task::JoinHandle<std::io::Result<()>>,
    control: thread::JoinHandle<anyhow::Result<Roadmap>>,
}

fn view_entries(roadmap: &Roadmap) -> Vec<ViewEntry> {
    roadmap
        .views()
        .iter()
        .map(|b| ViewEntry {
            bookmark: b.clone(),
            configuration: *roadmap
                .vertex(b.vertex_id)
                .expect("views point at vertices"),
        })
        .collect()
}

/// Starts the control loop and the network front end on `listener`.
pub async fn start(
    cfg: RunConfig,
    listener: TcpListener,
    opts: ServeOptions,
) -> anyhow::Result<Server> {
    cfg.validate()?;
    let addr = listener.local_addr()?;
    let mut engine = Engine::new(cfg, opts.search_policy);
    if let Some(path) = &opts.session_log {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        engine.record_to(Box::new(BufWriter::new(file)))?;
    }

    let (tx, rx) = mpsc::channel();
    let (bus, _) = broadcast::channel(BROADCAST_CAPACITY);
    let snapshot = Arc::new(RwLock::new(Snapshot {
        views: view_entries(engine.roadmap()),
        stats: engine.roadmap().stats(),
        telemetry: engine.telemetry(),
    }));
    let stop = Arc::new(AtomicBool::new(false));

    let control = {
        let (bus, snapshot, stop) = (bus.clone(), snapshot.clone(), stop.clone());
        let roadmap_out = opts.roadmap_out.clone();
        thread::Builder::new()
            .name("control-loop".into())
            .spawn(move || {
                let mut engine = engine;
                control_loop(&mut engine, rx, &bus, &snapshot, &stop);
                engine.finish().context("finishing session log")?;
                let roadmap = engine.roadmap().clone();
                if let Some(path) = roadmap_out {
                    let file = File::create(&path)
                        .with_context(|| format!("creating {}", path.display()))?;
                    roadmap
                        .save_json(BufWriter::new(file))
                        .with_context(|| format!("writing {}", path.display()))?;
                }
                Ok(roadmap)
            })?
    };

    let state = AppState {
        commands: tx,
        bus,
        snapshot,
        operator: Arc::new(Mutex::new(None)),
        next_conn: Arc::new(AtomicU64::new(1)),
    };
    let app = Router::new()
        .route("/ops", get(ops))
        .route("/views", get(views))
        .route("/roadmap/stats", get(stats))
        .route("/health", get(health))
        .with_state(state);
    let (http_shutdown, mut shutdown_rx) = watch::channel(false);
    let http = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = shutdown_rx.wait_for(|v| *v).await;
            })
            .await
    });
    log::info!("listening on {addr}");
    Ok(Server {
        addr,
        stop,
        http_shutdown,
        http,
        control,
    })
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections, stops the control loop, finalizes the
    /// session log and returns the final roadmap.
    pub async fn shutdown(self) -> anyhow::Result<Roadmap> {
        let _ = self.http_shutdown.send(true);
        self.stop.store(true, Ordering::SeqCst);
        let control = self.control;
        let roadmap = tokio::task::spawn_blocking(move || control.join())
            .await?
            .map_err(|_| anyhow::anyhow!("control loop panicked"))??;
        // open WebSockets keep graceful shutdown waiting; do not block on them
        let _ = tokio::time::timeout(Duration::from_secs(1), self.http).await;
        Ok(roadmap)
    }
}

fn control_loop(
    engine: &mut Engine,
    rx: mpsc::Receiver<Inbound>,
    bus: &broadcast::Sender<Arc<Body>>,
    snapshot: &RwLock<Snapshot>,
    stop: &AtomicBool,
) {
    let cfg = engine.controller().config().clone();
    let period = Duration::from_secs_f64(cfg.tick_period_s());
    let ratio = cfg.telemetry_rate_hz / cfg.tick_rate_hz;
    let mut last_mode = engine.controller().mode();
    let mut view_count = engine.roadmap().views().len();
    let mut next = Instant::now();
    while !stop.load(Ordering::SeqCst) {
        while let Ok(msg) = rx.try_recv() {
            let result = engine
                .submit(msg.seq, msg.command)
                .map_err(|e| e.to_string());
            let _ = msg.reply.send(result);
        }
        let telemetry = engine.step();
        // a send error only means nobody is listening
        for event in engine.drain_events() {
            let _ = bus.send(Arc::new(Body::Event(event)));
        }
        let roadmap = engine.roadmap();
        let views_changed = roadmap.views().len() != view_count;
        let mut snap = snapshot.write().expect("snapshot lock");
        if views_changed {
            view_count = roadmap.views().len();
            snap.views = view_entries(roadmap);
            let _ = bus.send(Arc::new(Body::ViewList {
                views: roadmap.views().as_slice().to_vec(),
            }));
        }
        snap.stats = roadmap.stats();
        snap.telemetry = telemetry.clone();
        drop(snap);

        let tick = telemetry.tick as f64;
        let due = ((tick + 1.0) * ratio).floor() > (tick * ratio).floor();
        if due || telemetry.mode != last_mode {
            last_mode = telemetry.mode;
            let _ = bus.send(Arc::new(Body::Telemetry(telemetry)));
        }

        next += period;
        let now = Instant::now();
        if next > now {
            thread::sleep(next - now);
        } else if now - next > period * 10 {
            // fell far behind; do not try to catch up
            next = now;
        }
    }
}

async fn views(State(state): State<AppState>) -> impl IntoResponse {
    Json(state.snapshot.read().expect("snapshot lock").views.clone())
}

async fn stats(State(state): State<AppState>) -> impl IntoResponse {
    Json(state.snapshot.read().expect("snapshot lock").stats)
}

async fn health(State(state): State<AppState>) -> impl IntoResponse {
    let snap = state.snapshot.read().expect("snapshot lock");
    Json(Health {
        status: "ok",
        tick: snap.telemetry.tick,
        mode: snap.telemetry.mode,
        operator_connected: state.operator.lock().expect("operator lock").is_some(),
    })
}

async fn ops(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    let id = state.next_conn.fetch_add(1, Ordering::SeqCst);
    ws.on_upgrade(move |socket| connection(socket, state, id))
}

/// Outbound half of one connection; numbers messages per connection.
struct Outbox {
    seq: u64,
}

impl Outbox {
    fn frame(&mut self, body: Body) -> Message {
        self.seq += 1;
        Message::Text(WireMessage::new(self.seq, body).to_json().into())
    }
}

fn error_body(code: &str, message: impl Into<String>, in_reply_to: Option<u64>) -> Body {
    Body::Error(ErrorPayload {
        code: code.to_owned(),
        message: message.into(),
        in_reply_to,
    })
}

async fn connection(socket: WebSocket, state: AppState, id: u64) {
    let (mut tx, mut rx) = socket.split();
    let mut bus = state.bus.subscribe();
    let mut out = Outbox { seq: 0 };
    let greeting = {
        let snap = state.snapshot.read().expect("snapshot lock");
        [
            Body::ViewList {
                views: snap.views.iter().map(|v| v.bookmark.clone()).collect(),
            },
            Body::Telemetry(snap.telemetry.clone()),
        ]
    };
    for body in greeting {
        if tx.send(out.frame(body)).await.is_err() {
            return;
        }
    }
    log::info!("connection {id} opened");
    loop {
        tokio::select! {
            inbound = rx.next() => match inbound {
                Some(Ok(Message::Text(text))) => {
                    if let Some(reply) = handle_text(&state, id, text.as_str()).await {
                        if tx.send(out.frame(reply)).await.is_err() {
                            break;
                        }
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            outbound = bus.recv() => match outbound {
                Ok(body) => {
                    if tx.send(out.frame((*body).clone())).await.is_err() {
                        break;
                    }
                }
                // slow consumer: stale messages were dropped, keep going
                Err(broadcast::error::RecvError::Lagged(n)) => log::debug!("connection {id} skipped {n} messages"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
    let mut operator = state.operator.lock().expect("operator lock");
    if *operator == Some(id) {
        *operator = None;
    }
    log::info!("connection {id} closed");
}

/// Processes one inbound frame; returns an error reply if any.
async fn handle_text(state: &AppState, id: u64, text: &str) -> Option<Body> {
    let msg = match WireMessage::parse(text) {
        Ok(m) => m,
        Err(e) => {
            return Some(error_body(
                e.code(),
                e.to_string(),
                WireMessage::peek_seq(text),
            ))
        }
    };
    let seq = msg.seq;
    let command = match msg.body.into_command() {
        Ok(c) => c,
        Err(e) => return Some(error_body(e.code(), e.to_string(), Some(seq))),
    };
    {
        let mut operator = state.operator.lock().expect("operator lock");
        match *operator {
            None => *operator = Some(id),
            Some(holder) if holder == id => {}
            Some(_) => {
                return Some(error_body(
                    "not_authorized",
                    "another operator session holds command authority",
                    Some(seq),
                ))
            }
        }
    }
    let (reply, result) = oneshot::channel();
    if state
        .commands
        .send(Inbound {
            seq,
            command,
            reply,
        })
        .is_err()
    {
        return Some(error_body("unavailable", "control loop stopped", Some(seq)));
    }
    match result.await {
        Ok(Ok(())) => None,
        Ok(Err(message)) => Some(error_body("rejected", message, Some(seq))),
        Err(_) => Some(error_body("unavailable", "control loop stopped", Some(seq))),
    }
}
