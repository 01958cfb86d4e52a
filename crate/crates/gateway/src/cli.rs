use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use viewnav_core::bench::benchmark;
use viewnav_core::session::{replay, ReplayOutput};
use viewnav_core::validation::{evaluate_study, Study};
use viewnav_core::RunConfig;

use crate::server::{self, ServeOptions};

#[derive(Debug, Parser)]
#[command(
    name = "viewnav",
    version,
    about = "Roadmap-based catheter view recovery"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured rng seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn load(&self) -> anyhow::Result<Option<RunConfig>> {
        let mut cfg = match &self.config {
            Some(path) => Some(RunConfig::load(path)?),
            None => None,
        };
        if let Some(seed) = self.seed {
            cfg.get_or_insert_with(RunConfig::default)
                .actuation
                .rng_seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run the control loop behind the WebSocket/HTTP service.
    Serve {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        port: Option<u16>,
        /// Directory for session.jsonl and roadmap.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-execute a recorded session.
    Replay {
        session: PathBuf,
        /// Replaces the configuration recorded in the session.
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory for roadmap.json, trajectory.jsonl and report files.
        #[arg(long, default_value = "replay-out")]
        out: PathBuf,
    },
    /// Time roadmap construction and recovery queries.
    Benchmark {
        #[arg(long, default_value_t = 8000)]
        states: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the result as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a study file of labeled point sets.
    Report {
        study: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild the roadmap of a recorded session and write it out.
    ExportRoadmap {
        session: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "roadmap.json")]
        out: PathBuf,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut f =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn replay_file(session: &Path, config: &ConfigArgs) -> anyhow::Result<ReplayOutput> {
    let file = File::open(session).with_context(|| format!("opening {}", session.display()))?;
    let cfg = config.load()?;
    replay(BufReader::new(file), cfg).with_context(|| format!("replaying {}", session.display()))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Cmd::Serve { config, port, out } => {
            let mut cfg = config.load()?.unwrap_or_default();
            if let Some(port) = port {
                cfg.port = port;
            }
            let opts = match out {
                Some(dir) => {
                    fs::create_dir_all(&dir)?;
                    ServeOptions {
                        session_log: Some(dir.join("session.jsonl")),
                        roadmap_out: Some(dir.join("roadmap.json")),
                        ..Default::default()
                    }
                }
                None => ServeOptions::default(),
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(("0.0.0.0", cfg.port))
                    .await
                    .with_context(|| format!("binding port {}", cfg.port))?;
                let server = server::start(cfg, listener, opts).await?;
                println!("serving on {}", server.local_addr());
                tokio::signal::ctrl_c().await?;
                let roadmap = server.shutdown().await?;
                println!("stopped; roadmap {:?}", roadmap.stats());
                Ok(())
            })
        }
        Cmd::Replay {
            session,
            config,
            out,
        } => {
            let result = replay_file(&session, &config)?;
            fs::create_dir_all(&out)?;
            result
                .roadmap
                .save_json(BufWriter::new(File::create(out.join("roadmap.json"))?))?;
            let mut traj = BufWriter::new(File::create(out.join("trajectory.jsonl"))?);
            result.write_trajectory(&mut traj)?;
            traj.flush()?;
            println!("roadmap: {:?}", result.roadmap.stats());
            println!(
                "ticks: {}, recoveries: {}",
                result.trajectory.len(),
                result.outcomes.len()
            );
            if let Some(report) = &result.report {
                write_json(&out.join("report.json"), report)?;
                fs::write(out.join("report.txt"), report.to_table())?;
                print!("{}", report.to_table());
            }
            Ok(())
        }
        Cmd::Benchmark { states, seed, out } => {
            anyhow::ensure!(states >= 2, "benchmark needs at least 2 states");
            let result = benchmark(states, seed);
            println!("{}", serde_json::to_string_pretty(&result)?);
            if let Some(path) = out {
                write_json(&path, &result)?;
            }
            Ok(())
        }
        Cmd::Report { study, out } => {
            let text = fs::read_to_string(&study)
                .with_context(|| format!("reading {}", study.display()))?;
            let study: Study = serde_json::from_str(&text).context("parsing study")?;
            let (_, report) = evaluate_study(&study)?;
            print!("{}", report.to_table());
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            Ok(())
        }
        Cmd::ExportRoadmap {
            session,
            config,
            out,
        } => {
            let result = replay_file(&session, &config)?;
            result
                .roadmap
                .save_json(BufWriter::new(File::create(&out)?))?;
            println!("wrote {} ({:?})", out.display(), result.roadmap.stats());
            Ok(())
        }
    }
}
