//! Log bundles: running a session to disk, reading it back and analyzing it.
//!
//! A bundle directory holds `config.toml` (the resolved config), `ticks.csv`
//! (one row per plant tick), `events.csv` (task and grab events) and
//! `manifest.json` (seed, config hash and SHA-256 of every file).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{analyze_summaries, summarize_trial, AnalysisOutput, SegmentCollector, TrialSummary};
use crate::config::{hex, ConfigError, SessionConfig};
use crate::coupling::Grab;
use crate::kinematics::JointVector;
use crate::metrics::MetricsError;
use crate::session::{Session, SessionError, TickRecord, PAUSE_PHASE};
use crate::task::{secs, Condition, PoseId, TaskEvent, TaskEventKind, TrialRecord, ScheduledTrial};
use crate::kinematics::GraspPoint;

pub const TICKS_FILE: &str = "ticks.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRUNCATION_MARKER: &str = "# TRUNCATED";

pub const TICK_COLUMNS: [&str; 37] = [
    "t_s", "q1", "q2", "q3", "q4", "q5", "q6", "elbow_x", "elbow_y", "elbow_z", "wrist_x",
    "wrist_y", "wrist_z", "leader_x", "leader_y", "leader_z", "mapped_x", "mapped_y", "mapped_z",
    "grab_state", "Fs_x", "Fs_y", "Fs_z", "Fa_x", "Fa_y", "Fa_z", "tau1", "tau2", "tau3", "tau4",
    "tau5", "tau6", "trial_id", "pose_id", "phase", "condition", "block",
];

pub const EVENT_COLUMNS: [&str; 9] = [
    "t_s", "kind", "trial_id", "pose", "condition", "block", "familiarization", "point", "value",
];

const PHASES: [&str; 7] = [
    "show_target",
    "reaching",
    "holding",
    "confirmed",
    "return_to_base",
    "complete",
    PAUSE_PHASE,
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{file} row {row}: {msg}")]
    Malformed { file: String, row: u64, msg: String },
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("session faulted after {ticks} ticks, log truncated: {cause}")]
    Truncated { ticks: u64, cause: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writer that hashes everything passing through it.
pub struct HashingWriter<W: Write> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> HashingWriter<W> {
    pub fn new(inner: W) -> Self {
        Self {
            inner,
            hasher: Sha256::new(),
        }
    }

    pub fn finish(mut self) -> io::Result<String> {
        self.inner.flush()?;
        Ok(hex(&self.hasher.finalize()))
    }
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Exact decimal seconds from integer microseconds.
pub fn fmt_time(t_us: u64) -> String {
    format!("{}.{:06}", t_us / 1_000_000, t_us % 1_000_000)
}

pub fn write_tick_header(w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "{}", TICK_COLUMNS.join(","))
}

pub fn write_tick_row(w: &mut impl Write, r: &TickRecord) -> io::Result<()> {
    // 2 ms ticks: the time column is exact to the millisecond
    write!(w, "{}.{:03}", r.t_us / 1_000_000, (r.t_us % 1_000_000) / 1000)?;
    for v in r.q.iter() {
        write!(w, ",{v:.6}")?;
    }
    for p in [&r.elbow, &r.wrist, &r.leader, &r.mapped] {
        write!(w, ",{:.6},{:.6},{:.6}", p.x, p.y, p.z)?;
    }
    write!(w, ",{}", r.grab.label())?;
    for f in [&r.force_leader, &r.force_follower] {
        write!(w, ",{:.5},{:.5},{:.5}", f.x, f.y, f.z)?;
    }
    for t in r.tau.iter() {
        write!(w, ",{t:.5}")?;
    }
    writeln!(
        w,
        ",{},{},{},{},{}",
        r.trial_id,
        r.pose.map_or("none", PoseId::as_str),
        r.phase,
        r.condition.as_str(),
        r.block
    )
}

pub fn write_event_header(w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "{}", EVENT_COLUMNS.join(","))
}

pub fn write_event_row(w: &mut impl Write, e: &TaskEvent) -> io::Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{:.6}",
        fmt_time(e.t_us),
        e.kind.as_str(),
        e.trial_id,
        e.pose.as_str(),
        e.condition.as_str(),
        e.block,
        e.familiarization as u8,
        e.point.map_or("none", GraspPoint::as_str),
        e.value
    )
}

struct Row<'a> {
    file: &'a str,
    n: u64,
    rec: &'a csv::StringRecord,
}

impl Row<'_> {
    fn err(&self, msg: impl Into<String>) -> ExperimentError {
        ExperimentError::Malformed {
            file: self.file.to_string(),
            row: self.n,
            msg: msg.into(),
        }
    }

    fn str(&self, i: usize) -> Result<&str, ExperimentError> {
        self.rec.get(i).ok_or_else(|| self.err(format!("missing column {i}")))
    }

    fn f64(&self, i: usize) -> Result<f64, ExperimentError> {
        let s = self.str(i)?;
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.err(format!("column {i}: '{s}' is not a finite number")))
    }

    fn int<T: std::str::FromStr>(&self, i: usize) -> Result<T, ExperimentError> {
        let s = self.str(i)?;
        s.parse::<T>()
            .map_err(|_| self.err(format!("column {i}: '{s}' is not an integer")))
    }

    fn vec3(&self, i: usize) -> Result<Vector3<f64>, ExperimentError> {
        Ok(Vector3::new(self.f64(i)?, self.f64(i + 1)?, self.f64(i + 2)?))
    }

    fn time_us(&self, i: usize) -> Result<u64, ExperimentError> {
        let s = self.str(i)?;
        let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
        let ok = !whole.is_empty()
            && whole.bytes().all(|b| b.is_ascii_digit())
            && frac.len() <= 6
            && frac.bytes().all(|b| b.is_ascii_digit());
        if !ok {
            return Err(self.err(format!("column {i}: '{s}' is not a time in seconds")));
        }
        let w: u64 = whole.parse().map_err(|_| self.err("time out of range"))?;
        let f: u64 = format!("{frac:0<6}").parse().unwrap_or(0);
        Ok(w * 1_000_000 + f)
    }

    fn len_is(&self, n: usize) -> Result<(), ExperimentError> {
        if self.rec.len() == n {
            Ok(())
        } else {
            Err(self.err(format!("expected {n} columns, found {}", self.rec.len())))
        }
    }
}

fn parse_tick(row: &Row) -> Result<TickRecord, ExperimentError> {
    row.len_is(TICK_COLUMNS.len())?;
    let mut q = JointVector::zeros();
    for j in 0..6 {
        q[j] = row.f64(1 + j)?;
    }
    let mut tau = JointVector::zeros();
    for j in 0..6 {
        tau[j] = row.f64(26 + j)?;
    }
    let grab_s = row.str(19)?;
    let grab = Grab::from_label(grab_s).ok_or_else(|| row.err(format!("unknown grab_state '{grab_s}'")))?;
    let pose_s = row.str(33)?;
    let pose = match pose_s {
        "none" => None,
        s => Some(PoseId::parse(s).ok_or_else(|| row.err(format!("unknown pose_id '{s}'")))?),
    };
    let phase_s = row.str(34)?;
    let phase = PHASES
        .iter()
        .find(|p| **p == phase_s)
        .ok_or_else(|| row.err(format!("unknown phase '{phase_s}'")))?;
    let cond_s = row.str(35)?;
    Ok(TickRecord {
        t_us: row.time_us(0)?,
        q,
        elbow: row.vec3(7)?,
        wrist: row.vec3(10)?,
        leader: row.vec3(13)?,
        mapped: row.vec3(16)?,
        grab,
        force_leader: row.vec3(20)?,
        force_follower: row.vec3(23)?,
        tau,
        trial_id: row.int(32)?,
        pose,
        phase,
        condition: Condition::parse(cond_s).ok_or_else(|| row.err(format!("unknown condition '{cond_s}'")))?,
        block: row.int(36)?,
    })
}

fn parse_event(row: &Row) -> Result<TaskEvent, ExperimentError> {
    row.len_is(EVENT_COLUMNS.len())?;
    let kind_s = row.str(1)?;
    let pose_s = row.str(3)?;
    let cond_s = row.str(4)?;
    let point = match row.str(7)? {
        "none" => None,
        "elbow" => Some(GraspPoint::Elbow),
        "wrist" => Some(GraspPoint::Wrist),
        s => return Err(row.err(format!("unknown point '{s}'"))),
    };
    Ok(TaskEvent {
        t_us: row.time_us(0)?,
        kind: TaskEventKind::parse(kind_s).ok_or_else(|| row.err(format!("unknown event '{kind_s}'")))?,
        trial_id: row.int(2)?,
        pose: PoseId::parse(pose_s).ok_or_else(|| row.err(format!("unknown pose '{pose_s}'")))?,
        condition: Condition::parse(cond_s).ok_or_else(|| row.err(format!("unknown condition '{cond_s}'")))?,
        block: row.int(5)?,
        familiarization: row.int::<u8>(6)? != 0,
        point,
        value: row.f64(8)?,
    })
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>, ExperimentError> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

fn check_header(rdr: &mut csv::Reader<File>, name: &str, expected: &[&str]) -> Result<(), ExperimentError> {
    let header = rdr.headers().map_err(|e| ExperimentError::Malformed {
        file: name.into(),
        row: 1,
        msg: e.to_string(),
    })?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(ExperimentError::Malformed {
            file: name.into(),
            row: 1,
            msg: "unexpected header".into(),
        });
    }
    Ok(())
}

/// Streams every tick row of a bundle to `f`. Row numbers in errors count
/// the header as row 1.
pub fn for_each_tick(dir: &Path, mut f: impl FnMut(&TickRecord)) -> Result<u64, ExperimentError> {
    let path = dir.join(TICKS_FILE);
    let mut rdr = csv_reader(&path)?;
    check_header(&mut rdr, TICKS_FILE, &TICK_COLUMNS)?;
    let mut rec = csv::StringRecord::new();
    let mut count = 0;
    loop {
        let n = rdr.position().line();
        match rdr.read_record(&mut rec) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                return Err(ExperimentError::Malformed {
                    file: TICKS_FILE.into(),
                    row: e.position().map_or(n, |p| p.line()),
                    msg: e.to_string(),
                })
            }
        }
        let row = Row {
            file: TICKS_FILE,
            n: rec.position().map_or(n, |p| p.line()),
            rec: &rec,
        };
        f(&parse_tick(&row)?);
        count += 1;
    }
    Ok(count)
}

pub fn read_events(dir: &Path) -> Result<Vec<TaskEvent>, ExperimentError> {
    let path = dir.join(EVENTS_FILE);
    let mut rdr = csv_reader(&path)?;
    check_header(&mut rdr, EVENTS_FILE, &EVENT_COLUMNS)?;
    let mut out = Vec::new();
    for res in rdr.records() {
        let rec = res.map_err(|e| ExperimentError::Malformed {
            file: EVENTS_FILE.into(),
            row: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let row = Row {
            file: EVENTS_FILE,
            n: rec.position().map_or(0, |p| p.line()),
            rec: &rec,
        };
        out.push(parse_event(&row)?);
    }
    Ok(out)
}

/// Rebuilds trial records from the event stream.
pub fn records_from_events(events: &[TaskEvent]) -> Vec<TrialRecord> {
    let mut by_id: BTreeMap<u32, TrialRecord> = BTreeMap::new();
    for e in events {
        match e.kind {
            TaskEventKind::TargetShown => {
                by_id.insert(
                    e.trial_id,
                    TrialRecord {
                        spec: ScheduledTrial {
                            trial_id: e.trial_id,
                            condition: e.condition,
                            block: e.block,
                            familiarization: e.familiarization,
                            pose: e.pose,
                        },
                        shown_at_us: e.t_us,
                        confirmed_at_us: None,
                    },
                );
            }
            TaskEventKind::PoseConfirmed => {
                if let Some(r) = by_id.get_mut(&e.trial_id) {
                    r.confirmed_at_us = Some(e.t_us);
                }
            }
            _ => {}
        }
    }
    by_id.into_values().collect()
}

pub fn is_truncated(dir: &Path) -> Result<bool, ExperimentError> {
    let path = dir.join(TICKS_FILE);
    let mut f = File::open(&path).map_err(io_err(&path))?;
    let len = f.metadata().map_err(io_err(&path))?.len();
    f.seek(SeekFrom::Start(len.saturating_sub(4096))).map_err(io_err(&path))?;
    let mut tail = String::new();
    BufReader::new(f)
        .read_to_string(&mut tail)
        .map_err(io_err(&path))?;
    Ok(tail.lines().any(|l| l.starts_with(TRUNCATION_MARKER)))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialCounts {
    pub scheduled: usize,
    pub recorded: usize,
    pub confirmed: usize,
    pub analyzed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub format: u32,
    pub seed: u64,
    pub config_hash: String,
    pub completed: bool,
    pub error: Option<String>,
    pub ticks: u64,
    pub sim_time_s: f64,
    pub trials: TrialCounts,
    pub transport: serde_json::Value,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub records: Vec<TrialRecord>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<String, ExperimentError> {
    std::fs::write(path, bytes).map_err(io_err(path))?;
    Ok(hex(&Sha256::digest(bytes)))
}

/// Incremental bundle writer for sessions driven tick by tick (for example
/// by the UI bridge). [`run_to_dir`] is the batch form.
pub struct BundleWriter {
    dir: PathBuf,
    ticks_path: PathBuf,
    w: HashingWriter<BufWriter<File>>,
    ticks: u64,
    files: BTreeMap<String, String>,
}

impl BundleWriter {
    /// Creates `dir` and writes the config and the tick header.
    pub fn create(dir: &Path, cfg: &SessionConfig) -> Result<Self, ExperimentError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut files = BTreeMap::new();
        files.insert(
            CONFIG_FILE.to_string(),
            write_file(&dir.join(CONFIG_FILE), cfg.to_toml().as_bytes())?,
        );
        let ticks_path = dir.join(TICKS_FILE);
        let file = File::create(&ticks_path).map_err(io_err(&ticks_path))?;
        let mut w = HashingWriter::new(BufWriter::with_capacity(1 << 20, file));
        write_tick_header(&mut w).map_err(io_err(&ticks_path))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            ticks_path,
            w,
            ticks: 0,
            files,
        })
    }

    pub fn tick(&mut self, rec: &TickRecord) -> Result<(), ExperimentError> {
        write_tick_row(&mut self.w, rec).map_err(io_err(&self.ticks_path))?;
        self.ticks += 1;
        Ok(())
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Writes events and manifest. With `fault` set the tick log gets the
    /// truncation marker and [`ExperimentError::Truncated`] is returned after
    /// everything is on disk.
    pub fn finish(mut self, session: &Session, fault: Option<String>) -> Result<RunSummary, ExperimentError> {
        let cfg = session.config();
        if let Some(cause) = &fault {
            writeln!(self.w, "{TRUNCATION_MARKER}: {cause}").map_err(io_err(&self.ticks_path))?;
        }
        let ticks_hash = self.w.finish().map_err(io_err(&self.ticks_path))?;
        self.files.insert(TICKS_FILE.to_string(), ticks_hash);

        let (records, events) = session.outcome();
        let mut buf = Vec::new();
        write_event_header(&mut buf).expect("in-memory write");
        for e in &events {
            write_event_row(&mut buf, e).expect("in-memory write");
        }
        self.files
            .insert(EVENTS_FILE.to_string(), write_file(&self.dir.join(EVENTS_FILE), &buf)?);

        let schedule = session.controller().schedule();
        let manifest = Manifest {
            format: 1,
            seed: cfg.seed,
            config_hash: cfg.hash(),
            completed: fault.is_none() && session.is_done(),
            error: fault.clone(),
            ticks: self.ticks,
            sim_time_s: secs(session.time_us()),
            trials: TrialCounts {
                scheduled: schedule.trials.len(),
                recorded: records.len(),
                confirmed: records.iter().filter(|r| r.confirmed_at_us.is_some()).count(),
                analyzed: schedule.analyzed().count(),
            },
            transport: serde_json::to_value(session.transport_stats()).expect("stats serialize"),
            files: self.files,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, json + "\n").map_err(io_err(&path))?;
        if let Some(cause) = fault {
            return Err(ExperimentError::Truncated {
                ticks: self.ticks,
                cause,
            });
        }
        Ok(RunSummary {
            dir: self.dir,
            manifest,
            records,
        })
    }
}

/// Runs a session and writes its bundle to `dir`. On a mid-run fault the tick
/// log ends with a truncation marker, the manifest records the error and
/// [`ExperimentError::Truncated`] is returned.
pub fn run_to_dir(session: &mut Session, dir: &Path) -> Result<RunSummary, ExperimentError> {
    let mut writer = BundleWriter::create(dir, session.config())?;
    let mut fault = None;
    while !session.is_done() {
        match session.step() {
            Ok(rec) => writer.tick(&rec)?,
            Err(e) => {
                fault = Some(e.to_string());
                break;
            }
        }
    }
    writer.finish(session, fault)
}

/// Scripted run of `cfg` into `dir`.
pub fn run_experiment(cfg: &SessionConfig, dir: &Path) -> Result<RunSummary, ExperimentError> {
    let mut session = Session::scripted(cfg.clone())?;
    run_to_dir(&mut session, dir)
}

/// Runs a session in memory and summarizes every trial.
pub fn run_in_memory(cfg: &SessionConfig) -> Result<Vec<TrialSummary>, ExperimentError> {
    let mut session = Session::scripted(cfg.clone())?;
    let mut collector = SegmentCollector::default();
    while !session.is_done() {
        collector.push(&session.step()?);
    }
    let (records, _) = session.outcome();
    let segments = collector.into_segments();
    let fs = 1.0 / cfg.plant.dt;
    records
        .iter()
        .map(|r| {
            summarize_trial(cfg.seed, r, segments.get(&r.spec.trial_id), fs, &cfg.analysis)
                .map_err(ExperimentError::from)
        })
        .collect()
}

/// Reads a bundle and summarizes every recorded trial. The config stored in
/// the bundle supplies the sampling rate and analysis parameters.
pub fn summarize_bundle(dir: &Path) -> Result<(SessionConfig, Vec<TrialSummary>, bool), ExperimentError> {
    let cfg_path = dir.join(CONFIG_FILE);
    let cfg = if cfg_path.exists() {
        SessionConfig::load(&cfg_path)?
    } else {
        SessionConfig::default()
    };
    let events = read_events(dir)?;
    let records = records_from_events(&events);
    let mut collector = SegmentCollector::default();
    for_each_tick(dir, |r| collector.push(r))?;
    let segments = collector.into_segments();
    let fs = 1.0 / cfg.plant.dt;
    let summaries = records
        .iter()
        .map(|r| summarize_trial(cfg.seed, r, segments.get(&r.spec.trial_id), fs, &cfg.analysis))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((cfg, summaries, is_truncated(dir)?))
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

pub const TRIAL_COLUMNS: [&str; 8] = [
    "trial_id", "condition", "block", "pose", "confirmed", "completion_s", "sparc_elbow",
    "sparc_wrist",
];

/// Writes `trials.csv`, `outliers.csv` and `aggregate.json` into `out`.
/// With `with_session` the trial table gets a leading `session` column.
pub fn write_analysis(out: &Path, a: &AnalysisOutput, with_session: bool) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut t = String::new();
    if with_session {
        t.push_str("session,");
    }
    t.push_str(&TRIAL_COLUMNS.join(","));
    t.push('\n');
    for s in &a.trials {
        if with_session {
            t.push_str(&format!("{},", s.session));
        }
        t.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.trial_id,
            s.condition.as_str(),
            s.block,
            s.pose.as_str(),
            s.confirmed as u8,
            opt(s.completion_s),
            opt(s.sparc_elbow),
            opt(s.sparc_wrist)
        ));
    }
    write_file(&out.join("trials.csv"), t.as_bytes())?;

    let mut o = String::from(
        "metric,condition,n_before,n_removed,percent_removed,mean_before,sd_before,mean_after,sd_after,q1,q3,lower_fence,upper_fence,removed\n",
    );
    for r in &a.outliers {
        o.push_str(&format!(
            "{},{},{},{},{:.2},{},{},{},{},{},{},{},{},{}\n",
            r.metric,
            r.condition.as_str(),
            r.n_before,
            r.n_removed,
            r.percent_removed,
            num(r.mean_before),
            num(r.sd_before),
            num(r.mean_after),
            num(r.sd_after),
            num(r.q1),
            num(r.q3),
            num(r.lower_fence),
            num(r.upper_fence),
            r.removed.join(";")
        ));
    }
    write_file(&out.join("outliers.csv"), o.as_bytes())?;

    let json = serde_json::to_string_pretty(&a.aggregate).expect("aggregate serializes");
    write_file(&out.join("aggregate.json"), (json + "\n").as_bytes())?;
    Ok(())
}

/// `analyze --in DIR --out DIR`: never touches the input bundle.
pub fn analyze_bundle(input: &Path, out: &Path) -> Result<AnalysisOutput, ExperimentError> {
    let (cfg, summaries, truncated) = summarize_bundle(input)?;
    let a = analyze_summaries(&summaries, cfg.analysis.outlier_k, truncated);
    write_analysis(out, &a, false)?;
    Ok(a)
}

/// Runs one in-memory session per seed (in parallel) and analyzes them
/// together.
pub fn run_batch(cfg: &SessionConfig, seeds: &[u64], out: Option<&Path>) -> Result<AnalysisOutput, ExperimentError> {
    let results: Vec<Result<Vec<TrialSummary>, ExperimentError>> = std::thread::scope(|scope| {
        let workers = std::thread::available_parallelism().map_or(4, |n| n.get());
        let chunks: Vec<Vec<u64>> = seeds
            .chunks(seeds.len().div_ceil(workers).max(1))
            .map(|c| c.to_vec())
            .collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| {
                scope.spawn(move || {
                    chunk
                        .into_iter()
                        .map(|seed| {
                            let mut c = cfg.clone();
                            c.seed = seed;
                            run_in_memory(&c)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("batch worker panicked"))
            .collect()
    });
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    let a = analyze_summaries(&all, cfg.analysis.outlier_k, false);
    if let Some(out) = out {
        write_analysis(out, &a, true)?;
    }
    Ok(a)
}
