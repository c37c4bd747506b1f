//! Live operator service.
//!
//! One thread owns the [`Simulation`]. WebSocket clients on `/ws` push
//! commands through a channel into a [`CommandQueue`] that the sim thread
//! drains at tick boundaries, and read snapshots from a watch channel that
//! the sim thread refreshes at most [`SNAPSHOT_HZ`] times per second.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use acat_core::gateway::{parse_command, CommandQueue, ErrorReply, ProtocolError, Snapshot};
use acat_core::simkernel::{EventLog, InputEvent};
use acat_core::{Scenario, Simulation};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;

use crate::Speed;

pub const WS_PATH: &str = "/ws";
pub const SNAPSHOT_HZ: u32 = 30;

const IDLE_POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("simulation thread panicked")]
    SimPanicked,
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub scenario: Scenario,
    pub speed: Speed,
    pub log_path: Option<PathBuf>,
    /// Hold the clock until [`ServerHandle::resume`]; commands still queue.
    pub start_paused: bool,
}

impl ServeConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self { scenario, speed: Speed::Max, log_path: None, start_paused: false }
    }
}

enum SimMsg {
    Command(InputEvent),
    Pause,
    Resume,
    Shutdown,
}

#[derive(Clone)]
struct AppState {
    commands: mpsc::Sender<SimMsg>,
    snapshots: watch::Receiver<Snapshot>,
    shutdown: watch::Receiver<bool>,
}

/// A running server.
pub struct ServerHandle {
    addr: SocketAddr,
    commands: mpsc::Sender<SimMsg>,
    snapshots: watch::Receiver<Snapshot>,
    queued: Arc<AtomicUsize>,
    shutdown: watch::Sender<bool>,
    server: tokio::task::JoinHandle<std::io::Result<()>>,
    sim: thread::JoinHandle<EventLog>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn ws_url(&self) -> String {
        format!("ws://{}{}", self.addr, WS_PATH)
    }

    /// Latest published snapshot.
    pub fn snapshot(&self) -> Snapshot {
        self.snapshots.borrow().clone()
    }

    pub fn subscribe(&self) -> watch::Receiver<Snapshot> {
        self.snapshots.clone()
    }

    /// Commands received but not yet handed to the simulation.
    pub fn queued_len(&self) -> usize {
        self.queued.load(Ordering::SeqCst)
    }

    pub fn pause(&self) {
        let _ = self.commands.send(SimMsg::Pause);
    }

    pub fn resume(&self) {
        let _ = self.commands.send(SimMsg::Resume);
    }

    /// Stops serving and returns the full event log.
    pub async fn shutdown(self) -> Result<EventLog, ServeError> {
        let _ = self.commands.send(SimMsg::Shutdown);
        let _ = self.shutdown.send(true);
        self.server.await.map_err(|_| ServeError::SimPanicked)??;
        tokio::task::spawn_blocking(move || self.sim.join())
            .await
            .map_err(|_| ServeError::SimPanicked)?
            .map_err(|_| ServeError::SimPanicked)
    }
}

/// Binds `addr` and starts the simulation thread and the WebSocket server.
pub async fn start(addr: SocketAddr, config: ServeConfig) -> Result<ServerHandle, ServeError> {
    let listener = TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })?;
    let addr = listener.local_addr()?;

    let mut sim = Simulation::new(config.scenario).with_fast_forward(config.speed == Speed::Max);
    let (snap_tx, snap_rx) = watch::channel(Snapshot::capture(&sim));
    let (cmd_tx, cmd_rx) = mpsc::channel();
    let (stop_tx, stop_rx) = watch::channel(false);
    let queued = Arc::new(AtomicUsize::new(0));

    let owner = SimOwner {
        rx: cmd_rx,
        snapshots: snap_tx,
        queued: Arc::clone(&queued),
        queue: CommandQueue::new(),
        speed: config.speed,
        paused: config.start_paused,
        log_path: config.log_path,
    };
    let sim = thread::Builder::new().name("acat-sim".into()).spawn(move || {
        owner.run(&mut sim);
        sim.into_log()
    })?;

    let app = Router::new().route(WS_PATH, get(ws_upgrade)).with_state(AppState {
        commands: cmd_tx.clone(),
        snapshots: snap_rx.clone(),
        shutdown: stop_rx.clone(),
    });
    let mut stop = stop_rx;
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = stop.wait_for(|s| *s).await;
            })
            .await
    });

    Ok(ServerHandle { addr, commands: cmd_tx, snapshots: snap_rx, queued, shutdown: stop_tx, server, sim })
}

/// Serves until Ctrl-C.
pub fn run_blocking(
    addr: SocketAddr,
    scenario: Scenario,
    speed: Speed,
    log_path: Option<PathBuf>,
) -> anyhow::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let config = ServeConfig { scenario, speed, log_path, start_paused: false };
        let handle = start(addr, config).await?;
        eprintln!("serving on {}", handle.ws_url());
        tokio::signal::ctrl_c().await?;
        let log = handle.shutdown().await?;
        eprintln!("shut down after {} events", log.len());
        Ok(())
    })
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn client(socket: WebSocket, mut state: AppState) {
    let (mut tx, mut rx) = socket.split();
    // Late joiners get the current state right away.
    let first = state.snapshots.borrow_and_update().to_json();
    if tx.send(Message::Text(first.into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            changed = state.snapshots.changed() => {
                if changed.is_err() {
                    break;
                }
                let json = state.snapshots.borrow_and_update().to_json();
                if tx.send(Message::Text(json.into())).await.is_err() {
                    break;
                }
            }
            msg = rx.next() => {
                let reply = match msg {
                    Some(Ok(Message::Text(text))) => match parse_command(text.as_str()) {
                        Ok((_, input)) => {
                            if state.commands.send(SimMsg::Command(input)).is_err() {
                                break;
                            }
                            None
                        }
                        Err(e) => Some(ErrorReply::new(&e)),
                    },
                    Some(Ok(Message::Binary(_))) => {
                        Some(ErrorReply::new(&ProtocolError::Malformed("binary frames are not supported".into())))
                    }
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                    Some(Ok(_)) => None,
                };
                if let Some(reply) = reply {
                    if tx.send(Message::Text(reply.to_json().into())).await.is_err() {
                        break;
                    }
                }
            }
            _ = state.shutdown.changed() => break,
        }
    }
    let _ = tx.send(Message::Close(None)).await;
}

struct SimOwner {
    rx: mpsc::Receiver<SimMsg>,
    snapshots: watch::Sender<Snapshot>,
    queued: Arc<AtomicUsize>,
    queue: CommandQueue,
    speed: Speed,
    paused: bool,
    log_path: Option<PathBuf>,
}

impl SimOwner {
    /// Returns false on shutdown.
    fn accept(&mut self, msg: SimMsg) -> bool {
        match msg {
            SimMsg::Command(input) => {
                self.queue.push(input);
                self.queued.store(self.queue.len(), Ordering::SeqCst);
            }
            SimMsg::Pause => self.paused = true,
            SimMsg::Resume => self.paused = false,
            SimMsg::Shutdown => return false,
        }
        true
    }

    fn publish(&self, sim: &Simulation) {
        self.snapshots.send_replace(Snapshot::capture(sim));
    }

    fn save_log(&self, sim: &Simulation) {
        if let Some(path) = &self.log_path {
            if let Err(e) = crate::write_log(sim, path) {
                eprintln!("warning: {e:#}");
            }
        }
    }

    fn run(mut self, sim: &mut Simulation) {
        let min_gap = Duration::from_secs(1) / SNAPSHOT_HZ;
        let limit = sim.scenario().max_time_s * 1_000_000;
        let mut last_publish: Option<Instant> = None;
        let mut dirty = false;
        // Wall instant and virtual time at which pacing last restarted.
        let mut anchor: Option<(Instant, u64)> = None;
        loop {
            loop {
                match self.rx.try_recv() {
                    Ok(msg) => {
                        if !self.accept(msg) {
                            return self.finish(sim);
                        }
                    }
                    Err(mpsc::TryRecvError::Empty) => break,
                    Err(mpsc::TryRecvError::Disconnected) => return self.finish(sim),
                }
            }

            let stalled = sim.is_settled() || sim.now() > limit;
            if self.paused || (stalled && self.queue.is_empty()) {
                if dirty {
                    self.publish(sim);
                    last_publish = Some(Instant::now());
                    dirty = false;
                    if stalled {
                        self.save_log(sim);
                    }
                }
                anchor = None;
                match self.rx.recv_timeout(IDLE_POLL) {
                    Ok(msg) => {
                        if !self.accept(msg) {
                            return self.finish(sim);
                        }
                    }
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => return self.finish(sim),
                }
                continue;
            }

            for input in self.queue.drain_tick() {
                sim.submit(input);
            }
            self.queued.store(0, Ordering::SeqCst);
            sim.step();
            dirty = true;

            if last_publish.is_none_or(|t| t.elapsed() >= min_gap) {
                self.publish(sim);
                last_publish = Some(Instant::now());
                dirty = false;
            }

            if let Speed::Factor(factor) = self.speed {
                let (wall0, virt0) = *anchor.get_or_insert((Instant::now(), sim.now()));
                let ahead = (sim.now() - virt0) as f64 / 1e6 / factor;
                let due = wall0 + Duration::from_secs_f64(ahead);
                let now = Instant::now();
                // Sleep in chunks so incoming commands are not held back long.
                if due > now + Duration::from_millis(1) {
                    thread::sleep((due - now).min(IDLE_POLL));
                }
            }
        }
    }

    fn finish(self, sim: &Simulation) {
        self.publish(sim);
        self.save_log(sim);
    }
}
