//! `/ws` endpoint.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use tokio::sync::{oneshot, watch};

use teleguide_core::config::SessionConfig;
use teleguide_core::experiment::RunSummary;

use crate::live::{run_live, run_replay, LiveSession, Published, ReplaySource, StateSender};
use crate::mailbox::{CommandMailbox, RateLimiter};
use crate::protocol::{
    parse_command, CommandError, ServerFrame, ServerMode, SessionControl, UiCommand,
    PROTOCOL_VERSION,
};
use crate::BridgeError;

#[derive(Clone)]
struct AppState {
    mode: ServerMode,
    rate_hz: f64,
    max_commands: u32,
    mailbox: Arc<CommandMailbox>,
    states: watch::Receiver<Option<Published>>,
}

/// Commands a mode accepts. Observers and replays may pause and resume
/// pacing, which never changes the simulated outcome.
fn check_allowed(mode: ServerMode, cmd: &UiCommand) -> Result<(), CommandError> {
    match (mode, cmd) {
        (ServerMode::Ui, _) => Ok(()),
        (
            _,
            UiCommand::SessionControl {
                action: SessionControl::Start | SessionControl::Pause,
                ..
            },
        ) => Ok(()),
        (ServerMode::Observer, _) => Err(CommandError::Rejected("leader is scripted; observer mode is read-only")),
        (ServerMode::Replay, _) => Err(CommandError::Rejected("replay is read-only")),
    }
}

async fn ws_route(ws: WebSocketUpgrade, State(st): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, st))
}

async fn send(socket: &mut WebSocket, text: &str) -> bool {
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn connection(mut socket: WebSocket, st: AppState) {
    let hello = ServerFrame::Hello {
        v: PROTOCOL_VERSION,
        mode: st.mode,
        rate_hz: st.rate_hz,
    };
    if !send(&mut socket, &hello.to_json()).await {
        return;
    }
    let mut states = st.states.clone();
    let mut last_seq = 0u64;
    let mut limiter = RateLimiter::per_second(st.max_commands);
    let current = states.borrow_and_update().clone();
    if let Some(p) = current {
        last_seq = p.seq;
        if !send(&mut socket, &p.json).await {
            return;
        }
    }
    loop {
        tokio::select! {
            changed = states.changed() => {
                if changed.is_err() {
                    break;
                }
                let latest = states.borrow_and_update().clone();
                if let Some(p) = latest {
                    if p.seq > last_seq {
                        last_seq = p.seq;
                        if !send(&mut socket, &p.json).await {
                            break;
                        }
                    }
                }
            }
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                if !limiter.allow(Instant::now()) {
                    log::debug!("command dropped by rate limit");
                    continue;
                }
                let result = parse_command(text.as_str()).and_then(|cmd| {
                    check_allowed(st.mode, &cmd)?;
                    Ok(cmd)
                });
                match result {
                    Ok(cmd) => st.mailbox.apply(cmd),
                    Err(e) => {
                        if !send(&mut socket, &ServerFrame::error(e.to_string()).to_json()).await {
                            break;
                        }
                    }
                }
            }
        }
    }
}

type SimHandle = std::thread::JoinHandle<Result<Option<RunSummary>, BridgeError>>;

/// A running bridge: HTTP server plus the simulation or replay thread.
pub struct BridgeServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    tx: StateSender,
    shutdown: oneshot::Sender<()>,
    http: tokio::task::JoinHandle<()>,
    sim: SimHandle,
}

async fn start(
    bind: &str,
    state: AppState,
    tx: StateSender,
    stop: Arc<AtomicBool>,
    sim: SimHandle,
) -> Result<BridgeServer, BridgeError> {
    let listener = match tokio::net::TcpListener::bind(bind).await {
        Ok(l) => l,
        Err(e) => {
            stop.store(true, Ordering::Relaxed);
            return Err(BridgeError::Bind(bind.to_string(), e));
        }
    };
    let addr = listener.local_addr().map_err(|e| BridgeError::Bind(bind.to_string(), e))?;
    let app = Router::new().route("/ws", get(ws_route)).with_state(state);
    let (shutdown, signal) = oneshot::channel::<()>();
    let http = tokio::spawn(async move {
        let served = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = signal.await;
            })
            .await;
        if let Err(e) = served {
            log::error!("ws server: {e}");
        }
    });
    log::info!("ws endpoint on ws://{addr}/ws");
    Ok(BridgeServer {
        addr,
        stop,
        tx,
        shutdown,
        http,
        sim,
    })
}

impl BridgeServer {
    /// Serves a live session. Without `out` nothing is written to disk.
    pub async fn live(cfg: SessionConfig, bind: &str, out: Option<PathBuf>) -> Result<Self, BridgeError> {
        let rate_hz = cfg.ui.rate_hz;
        let max_commands = cfg.ui.max_commands_per_s;
        let live = LiveSession::new(cfg, out.as_deref())?;
        let (tx, rx) = watch::channel(None);
        let tx = Arc::new(tx);
        let state = AppState {
            mode: live.mode(),
            rate_hz,
            max_commands,
            mailbox: live.mailbox(),
            states: rx,
        };
        let stop = Arc::new(AtomicBool::new(false));
        let sim = {
            let (tx, stop) = (Arc::clone(&tx), Arc::clone(&stop));
            std::thread::Builder::new()
                .name("sim".into())
                .spawn(move || run_live(live, tx, stop))
                .map_err(BridgeError::Thread)?
        };
        start(bind, state, tx, stop, sim).await
    }

    /// Streams a recorded bundle at `speed` times the recorded rate.
    pub async fn replay(dir: &Path, bind: &str, speed: f64) -> Result<Self, BridgeError> {
        let src = ReplaySource::open(dir)?;
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(BridgeError::Replay(format!("speed must be > 0, got {speed}")));
        }
        let mailbox = CommandMailbox::new();
        let (tx, rx) = watch::channel(None);
        let tx = Arc::new(tx);
        let state = AppState {
            mode: ServerMode::Replay,
            rate_hz: src.cfg.ui.rate_hz,
            max_commands: src.cfg.ui.max_commands_per_s,
            mailbox: Arc::clone(&mailbox),
            states: rx,
        };
        let stop = Arc::new(AtomicBool::new(false));
        let sim = {
            let (tx, stop) = (Arc::clone(&tx), Arc::clone(&stop));
            std::thread::Builder::new()
                .name("replay".into())
                .spawn(move || run_replay(src, speed, mailbox, tx, stop))
                .map_err(BridgeError::Thread)?
        };
        start(bind, state, tx, stop, sim).await
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Resolves once the session or replay has published its final frame.
    pub async fn finished(&self) {
        let mut rx = self.tx.subscribe();
        let _ = rx.wait_for(|p| p.as_ref().is_some_and(|p| p.done)).await;
    }

    /// Fault reported by the simulation, if it stopped on one.
    pub fn fault(&self) -> Option<String> {
        self.tx.borrow().as_ref().and_then(|p| p.fault.clone())
    }

    /// Stops the simulation, closes every connection and returns the bundle
    /// summary if one was written.
    pub async fn shutdown(self) -> Result<Option<RunSummary>, BridgeError> {
        self.stop.store(true, Ordering::Relaxed);
        let sim = self.sim;
        let result = tokio::task::spawn_blocking(move || sim.join())
            .await
            .map_err(|e| BridgeError::Replay(format!("join: {e}")))?
            .map_err(|_| BridgeError::Replay("simulation thread panicked".into()))?;
        // closing the channel ends every connection loop
        drop(self.tx);
        let _ = self.shutdown.send(());
        if tokio::time::timeout(Duration::from_secs(5), self.http).await.is_err() {
            log::warn!("ws server did not stop within 5 s");
        }
        result
    }
}
