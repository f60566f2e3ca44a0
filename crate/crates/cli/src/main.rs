use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Result};
use clap::{Args, Parser, Subcommand};

use teleguide_bridge::BridgeServer;
use teleguide_core::analysis::AnalysisOutput;
use teleguide_core::config::{LeaderSource, SessionConfig, TransportKind};
use teleguide_core::experiment::{analyze_bundle, run_batch, run_experiment, ExperimentError};

#[derive(Parser, Debug)]
#[command(name = "teleguide", version, about = "Haptic teleoperation sessions, analysis and live view")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one seeded session and write a log bundle.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        transport: Option<TransportKind>,
        /// Bundle directory; defaults to `output_dir` from the config, then `runs/seed-<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a bundle: per-trial CSV, outlier report, aggregate JSON.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a session behind the WebSocket bridge.
    Serve {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        ws: WsArgs,
        /// Keep the scripted trainer as leader and only watch.
        #[arg(long)]
        observer: bool,
        /// Also write a log bundle here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stream a recorded bundle over the WebSocket bridge.
    Replay {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        ws: WsArgs,
        /// Playback rate relative to the recording.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
    /// Run many seeds in memory and analyze them together.
    Batch {
        #[command(flatten)]
        config: ConfigArg,
        /// `a..b` (end exclusive) or a comma-separated list.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Seeds,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Session config (TOML). Missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<SessionConfig> {
        match &self.config {
            Some(p) => Ok(SessionConfig::load(p)?),
            None => Ok(SessionConfig::default()),
        }
    }
}

#[derive(Args, Debug)]
struct WsArgs {
    #[arg(long)]
    ws_port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
}

impl WsArgs {
    fn addr(&self) -> String {
        format!("{}:{}", self.bind, self.ws_port)
    }
}

#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("seed range start: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("seed range end: {e}"))?;
        (a..b).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse::<u64>().map_err(|e| format!("seed '{x}': {e}")))
            .collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(format!("no seeds in '{s}'"));
    }
    Ok(Seeds(seeds))
}

fn print_analysis(a: &AnalysisOutput) {
    println!(
        "{} analyzed trials, {} outlier rows",
        a.trials.len(),
        a.outliers.len()
    );
    for (cond, c) in &a.aggregate.conditions {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
        println!(
            "  {cond}: {}/{} confirmed, completion mean {} s, SPARC elbow {} wrist {}",
            c.confirmed,
            c.trials,
            fmt(c.completion_s.mean),
            fmt(c.sparc_elbow.mean),
            fmt(c.sparc_wrist.mean),
        );
    }
}

fn run(config: &ConfigArg, seed: Option<u64>, transport: Option<TransportKind>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = config.load()?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = transport {
        cfg.transport = t;
    }
    cfg.validate()?;
    let dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs/seed-{}", cfg.seed)));
    match run_experiment(&cfg, &dir) {
        Ok(s) => {
            let m = &s.manifest;
            println!(
                "{}: {} ticks, {:.1} s simulated, {}/{} trials confirmed, config {}",
                dir.display(),
                m.ticks,
                m.sim_time_s,
                m.trials.confirmed,
                m.trials.scheduled,
                &m.config_hash[..12],
            );
            Ok(())
        }
        Err(e @ ExperimentError::Truncated { .. }) => bail!("{e}; partial bundle in {}", dir.display()),
        Err(e) => Err(e.into()),
    }
}

async fn wait(server: &BridgeServer) {
    tokio::select! {
        _ = server.finished() => log::info!("session ended"),
        r = tokio::signal::ctrl_c() => {
            if let Err(e) = r {
                log::error!("cannot listen for ctrl-c: {e}");
            }
            log::info!("interrupted");
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| anyhow!("cannot start async runtime: {e}"))
}

fn serve(config: &ConfigArg, ws: &WsArgs, observer: bool, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = config.load()?;
    cfg.leader_source = if observer { LeaderSource::Scripted } else { LeaderSource::Ui };
    runtime()?.block_on(async {
        let server = BridgeServer::live(cfg, &ws.addr(), out).await?;
        println!("listening on ws://{}/ws", server.addr());
        wait(&server).await;
        let fault = server.fault();
        if let Some(s) = server.shutdown().await? {
            println!("bundle written to {}", s.dir.display());
        }
        match fault {
            Some(e) => bail!("session faulted: {e}"),
            None => Ok(()),
        }
    })
}

fn replay(input: &Path, ws: &WsArgs, speed: f64) -> Result<()> {
    runtime()?.block_on(async {
        let server = BridgeServer::replay(input, &ws.addr(), speed).await?;
        println!("listening on ws://{}/ws", server.addr());
        wait(&server).await;
        server.shutdown().await?;
        Ok(())
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Run {
            config,
            seed,
            transport,
            out,
        } => run(&config, seed, transport, out),
        Command::Analyze { input, out } => analyze_bundle(&input, &out)
            .map(|a| {
                print_analysis(&a);
                println!("summaries written to {}", out.display());
            })
            .map_err(Into::into),
        Command::Serve {
            config,
            ws,
            observer,
            out,
        } => serve(&config, &ws, observer, out),
        Command::Replay { input, ws, speed } => replay(&input, &ws, speed),
        Command::Batch { config, seeds, out } => config.load().and_then(|cfg| {
            let a = run_batch(&cfg, &seeds.0, Some(&out))?;
            print_analysis(&a);
            println!("summaries written to {}", out.display());
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // every error type here already renders its cause
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
