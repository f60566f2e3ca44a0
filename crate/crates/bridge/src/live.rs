//! Simulation-side loops: a live session paced to wall-clock time and a
//! recorded bundle streamed back at the recording rate. Both publish state
//! frames into a latest-value channel that connection handlers read.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use tokio::sync::watch;

use teleguide_core::config::{LeaderSource, SessionConfig};
use teleguide_core::experiment::{for_each_tick, BundleWriter, RunSummary, CONFIG_FILE};
use teleguide_core::session::{make_transport, ScriptedTrainer, Session, SessionSnapshot, TickRecord};
use teleguide_core::task::{check_pose_match, PoseId, PoseTargets, TaskParams};

use crate::mailbox::{CommandMailbox, UiLeader};
use crate::protocol::{snapshot, ServerFrame, ServerMode, SessionControl, UiStateMessage};
use crate::BridgeError;

/// One serialized state frame.
#[derive(Debug, Clone)]
pub struct Published {
    pub seq: u64,
    pub json: Arc<str>,
    pub done: bool,
    pub fault: Option<String>,
}

pub type StateSender = Arc<watch::Sender<Option<Published>>>;

pub fn publish(tx: &watch::Sender<Option<Published>>, msg: UiStateMessage) {
    let seq = msg.seq;
    let done = msg.done || msg.fault.is_some();
    let fault = msg.fault.clone();
    let json = ServerFrame::State(Box::new(msg)).to_json();
    tx.send_replace(Some(Published {
        seq,
        json: json.into(),
        done,
        fault,
    }));
}

fn ticks_per_frame(cfg: &SessionConfig) -> u64 {
    ((1.0 / (cfg.ui.rate_hz * cfg.plant.dt)).round() as u64).max(1)
}

/// A session driven tick by tick, optionally logging to a bundle.
pub struct LiveSession {
    session: Session,
    mailbox: Arc<CommandMailbox>,
    mode: ServerMode,
    running: bool,
    every: u64,
    seq: u64,
    ticks: u64,
    writer: Option<BundleWriter>,
    fault: Option<String>,
}

impl LiveSession {
    /// The leader is the UI when the config says so, otherwise the scripted
    /// trainer with the UI as observer. UI sessions start paused.
    pub fn new(cfg: SessionConfig, out: Option<&Path>) -> Result<Self, BridgeError> {
        let mailbox = CommandMailbox::new();
        let transport = make_transport(&cfg)?;
        let (mode, session) = match cfg.leader_source {
            LeaderSource::Ui => {
                let input = Box::new(UiLeader::new(Arc::clone(&mailbox)));
                (ServerMode::Ui, Session::new(cfg, transport, input)?)
            }
            LeaderSource::Scripted => {
                let input = Box::new(ScriptedTrainer::new(cfg.trainer, cfg.coupling.map));
                (ServerMode::Observer, Session::new(cfg, transport, input)?)
            }
        };
        let writer = out
            .map(|dir| BundleWriter::create(dir, session.config()))
            .transpose()?;
        let mut live = Self {
            every: ticks_per_frame(session.config()),
            session,
            mailbox,
            running: mode == ServerMode::Observer,
            mode,
            seq: 0,
            ticks: 0,
            writer,
            fault: None,
        };
        // the first tick gives clients something to draw before the start
        live.step();
        Ok(live)
    }

    pub fn mailbox(&self) -> Arc<CommandMailbox> {
        Arc::clone(&self.mailbox)
    }

    pub fn mode(&self) -> ServerMode {
        self.mode
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn is_running(&self) -> bool {
        self.running
    }

    pub fn is_finished(&self) -> bool {
        self.fault.is_some() || self.session.is_done()
    }

    /// Applies queued session controls; true if the run state changed.
    pub fn apply_controls(&mut self) -> bool {
        let mut changed = false;
        for c in self.mailbox.take_controls() {
            match c {
                SessionControl::Start => {
                    changed |= !self.running;
                    self.running = true;
                }
                SessionControl::Pause => {
                    changed |= self.running;
                    self.running = false;
                }
                // handlers refuse this outside UI mode
                SessionControl::NextTrial => self.session.skip_trial(),
            }
        }
        changed
    }

    /// State frame for the current snapshot with a fresh sequence number.
    pub fn message(&mut self) -> Option<UiStateMessage> {
        let snap = self.session.snapshot()?;
        self.seq += 1;
        Some(snapshot(&snap, self.seq, self.running, self.fault.clone()))
    }

    /// Advances one tick; returns a frame when one is due.
    pub fn step(&mut self) -> Option<UiStateMessage> {
        if self.is_finished() {
            return None;
        }
        match self.session.step() {
            Ok(rec) => {
                if let Some(w) = self.writer.as_mut() {
                    if let Err(e) = w.tick(&rec) {
                        self.fault = Some(e.to_string());
                    }
                }
                self.ticks += 1;
            }
            Err(e) => {
                log::error!("session fault: {e}");
                self.fault = Some(e.to_string());
            }
        }
        if self.ticks % self.every == 0 || self.is_finished() {
            self.message()
        } else {
            None
        }
    }

    /// Closes the bundle, if any.
    pub fn finish(self) -> Result<Option<RunSummary>, BridgeError> {
        match self.writer {
            Some(w) => Ok(Some(w.finish(&self.session, self.fault)?)),
            None => Ok(None),
        }
    }
}

/// Maps wall-clock time to a tick budget.
struct Pacer {
    origin: Instant,
    done: u64,
    tick_s: f64,
}

impl Pacer {
    fn new(sim_dt: f64, speed: f64) -> Self {
        Self {
            origin: Instant::now(),
            done: 0,
            tick_s: sim_dt / speed,
        }
    }

    fn due(&self) -> u64 {
        (self.origin.elapsed().as_secs_f64() / self.tick_s) as u64
    }

    fn reset(&mut self) {
        self.origin = Instant::now();
        self.done = 0;
    }
}

/// More than this many ticks behind and the pacer gives up catching up.
const MAX_LAG_TICKS: u64 = 1000;

/// Runs `live` at `cfg.ui.speed` times real time until it finishes or `stop`
/// is raised, then closes the bundle.
pub fn run_live(
    mut live: LiveSession,
    tx: StateSender,
    stop: Arc<AtomicBool>,
) -> Result<Option<RunSummary>, BridgeError> {
    let cfg = live.session().config();
    let mut pacer = Pacer::new(cfg.plant.dt, cfg.ui.speed);
    if let Some(m) = live.message() {
        publish(&tx, m);
    }
    while !stop.load(Ordering::Relaxed) {
        if live.apply_controls() {
            if let Some(m) = live.message() {
                publish(&tx, m);
            }
        }
        if !live.is_running() || live.is_finished() {
            pacer.reset();
            std::thread::sleep(Duration::from_millis(5));
            continue;
        }
        let due = pacer.due();
        if due > pacer.done + MAX_LAG_TICKS {
            log::warn!("simulation lagging wall clock, dropping {} ticks of catch-up", due - pacer.done);
            pacer.reset();
            continue;
        }
        while pacer.done < due && !live.is_finished() {
            if let Some(m) = live.step() {
                publish(&tx, m);
            }
            pacer.done += 1;
        }
        std::thread::sleep(Duration::from_millis(1));
    }
    live.finish()
}

/// Rebuilds live-view state from logged ticks: the active target comes from
/// the bundle's pose library, match status is recomputed from positions and
/// grip is inferred from the grab state.
pub struct ReplayTracker {
    targets: PoseTargets,
    task: TaskParams,
    holding_since: Option<u64>,
}

impl ReplayTracker {
    pub fn new(cfg: &SessionConfig) -> Result<Self, BridgeError> {
        let targets = cfg
            .poses
            .targets(&cfg.kinematics)
            .map_err(|e| BridgeError::Replay(format!("pose library: {e}")))?;
        Ok(Self {
            targets,
            task: cfg.task,
            holding_since: None,
        })
    }

    pub fn snapshot(&mut self, tick: &TickRecord) -> SessionSnapshot {
        let pose = match (tick.phase, tick.pose) {
            ("return_to_base", _) => Some(PoseId::Base),
            (_, p) => p,
        };
        let target = pose.map(|p| *self.targets.get(p));
        if tick.phase == "holding" {
            self.holding_since.get_or_insert(tick.t_us);
        } else {
            self.holding_since = None;
        }
        let points = teleguide_core::kinematics::GraspablePoints {
            elbow: tick.elbow,
            wrist: tick.wrist,
        };
        SessionSnapshot {
            tick: *tick,
            grip_closed: tick.grab.engaged().is_some(),
            target,
            matched: target.is_some_and(|t| check_pose_match(&points, &t, self.task.match_tol)),
            hold_remaining: self.holding_since.map(|since| {
                (self.task.hold_s - (tick.t_us - since) as f64 * 1e-6).max(0.0)
            }),
            familiarization: tick.trial_id != 0 && tick.block == 0,
            done: false,
        }
    }
}

/// Settings of a bundle replay.
pub struct ReplaySource {
    pub dir: PathBuf,
    pub cfg: SessionConfig,
}

impl ReplaySource {
    pub fn open(dir: &Path) -> Result<Self, BridgeError> {
        let cfg_path = dir.join(CONFIG_FILE);
        let cfg = if cfg_path.exists() {
            SessionConfig::load(&cfg_path)?
        } else {
            SessionConfig::default()
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            cfg,
        })
    }
}

/// Streams a bundle's tick log at `speed` times the recorded rate, honoring
/// start/pause from the mailbox.
pub fn run_replay(
    src: ReplaySource,
    speed: f64,
    mailbox: Arc<CommandMailbox>,
    tx: StateSender,
    stop: Arc<AtomicBool>,
) -> Result<Option<RunSummary>, BridgeError> {
    let mut tracker = ReplayTracker::new(&src.cfg)?;
    let every = ticks_per_frame(&src.cfg);
    let mut pacer = Pacer::new(src.cfg.plant.dt, speed);
    let mut running = true;
    let mut seq = 0u64;
    let mut n = 0u64;
    let mut last: Option<SessionSnapshot> = None;
    let emit = |snap: &SessionSnapshot, running: bool, seq: &mut u64| {
        *seq += 1;
        publish(&tx, snapshot(snap, *seq, running, None));
    };
    for_each_tick(&src.dir, |tick| {
        if stop.load(Ordering::Relaxed) {
            return;
        }
        loop {
            let controls = mailbox.take_controls();
            let before = running;
            for c in controls {
                match c {
                    SessionControl::Start => running = true,
                    SessionControl::Pause => running = false,
                    SessionControl::NextTrial => {}
                }
            }
            if before != running {
                if let Some(s) = &last {
                    emit(s, running, &mut seq);
                }
                pacer.reset();
            }
            if stop.load(Ordering::Relaxed) {
                return;
            }
            if running && pacer.due() >= pacer.done {
                break;
            }
            std::thread::sleep(Duration::from_millis(1));
        }
        pacer.done += 1;
        let snap = tracker.snapshot(tick);
        n += 1;
        if n % every == 0 {
            emit(&snap, running, &mut seq);
        }
        last = Some(snap);
    })?;
    if let Some(mut s) = last {
        s.done = true;
        emit(&s, running, &mut seq);
    }
    Ok(None)
}
