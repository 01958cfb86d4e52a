//! Command-driven engine around the controller, session recording and
//! deterministic replay.
//!
//! A session log is line-delimited JSON: a header carrying the run
//! configuration, then every inbound command, every search resolution and
//! every per-tick telemetry snapshot in the order they happened, then a
//! trailer with the record count.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    Controller, ControllerError, ControllerEvent, RecoveryOutcome, SearchPolicy, TeleopCommand,
    TrajectoryRecord,
};
use crate::protocol::{Command, Telemetry, PROTOCOL_VERSION};
use crate::roadmap::Roadmap;
use crate::runconfig::RunConfig;
use crate::validation::{build_report, ErrorSample, RecoveryReport};

pub const SESSION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("session format version {found} is not supported (expected {SESSION_FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("session log is truncated after {records} records")]
    Truncated { records: u64 },
    #[error("replay diverged at line {line}: {message}")]
    Divergence { line: usize, message: String },
}

/// One line of a session log. `ts` is a logical timestamp that strictly
/// increases from record to record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum SessionRecord {
    Header {
        format_version: u32,
        protocol_version: u32,
        config: RunConfig,
    },
    Command {
        ts: u64,
        tick: u64,
        seq: u64,
        command: Command,
    },
    SearchResolved {
        ts: u64,
        tick: u64,
    },
    Telemetry {
        ts: u64,
        telemetry: Telemetry,
    },
    Trailer {
        ts: u64,
        records: u64,
    },
}

struct Recorder {
    out: Box<dyn Write + Send>,
    ts: u64,
}

impl Recorder {
    fn write(&mut self, record: &SessionRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")
    }

    fn next_ts(&mut self) -> u64 {
        self.ts += 1;
        self.ts
    }
}

/// Applies commands to a [`Controller`] in arrival order and steps it at
/// a fixed period.
pub struct Engine {
    ctl: Controller,
    dt: f64,
    input: Option<TeleopCommand>,
    ack_seq: u64,
    recorder: Option<Recorder>,
    record_error: Option<io::Error>,
}

impl Engine {
    /// `policy` decides when a pending search is collected: `Blocking`
    /// collects it on the next step, `Background` once the worker has
    /// finished.
    pub fn new(cfg: RunConfig, policy: SearchPolicy) -> Self {
        let dt = cfg.tick_period_s();
        Self {
            ctl: Controller::with_policy(cfg, policy),
            dt,
            input: None,
            ack_seq: 0,
            recorder: None,
            record_error: None,
        }
    }

    /// Starts writing a session log to `out`.
    pub fn record_to(&mut self, out: Box<dyn Write + Send>) -> io::Result<()> {
        let mut rec = Recorder { out, ts: 0 };
        rec.write(&SessionRecord::Header {
            format_version: SESSION_FORMAT_VERSION,
            protocol_version: PROTOCOL_VERSION,
            config: self.ctl.config().clone(),
        })?;
        self.recorder = Some(rec);
        Ok(())
    }

    fn record(&mut self, make: impl FnOnce(u64) -> SessionRecord) {
        if let Some(rec) = self.recorder.as_mut() {
            let ts = rec.next_ts();
            if let Err(e) = rec.write(&make(ts)) {
                log::error!("session log write failed: {e}; recording stopped");
                self.record_error = Some(e);
                self.recorder = None;
            }
        }
    }

    /// Writes the trailer and flushes the log.
    pub fn finish(&mut self) -> io::Result<()> {
        if let Some(e) = self.record_error.take() {
            return Err(e);
        }
        if let Some(mut rec) = self.recorder.take() {
            let ts = rec.next_ts();
            rec.write(&SessionRecord::Trailer {
                ts,
                records: ts - 1,
            })?;
            rec.out.flush()?;
        }
        Ok(())
    }

    pub fn controller(&self) -> &Controller {
        &self.ctl
    }

    pub fn roadmap(&self) -> &Roadmap {
        self.ctl.roadmap()
    }

    pub fn ack_seq(&self) -> u64 {
        self.ack_seq
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Applies one command. Jogs take effect at the next step; the latest
    /// jog before a step wins.
    pub fn submit(&mut self, seq: u64, command: Command) -> Result<(), ControllerError> {
        let tick = self.ctl.state().tick;
        self.record(|ts| SessionRecord::Command {
            ts,
            tick,
            seq,
            command: command.clone(),
        });
        self.ack_seq = seq;
        match command {
            Command::JogKnob(r) => {
                self.input = Some(TeleopCommand::JogKnob(r));
                Ok(())
            }
            Command::JogTip(t) => {
                self.input = Some(TeleopCommand::JogTip(t));
                Ok(())
            }
            Command::SaveView(label) => self.ctl.save_view(&label).map(|_| ()),
            Command::RecoverView(label) => self.ctl.request_recovery(&label),
            Command::Cancel => {
                self.ctl.cancel();
                Ok(())
            }
        }
    }

    fn resolve_search(&mut self) {
        if self.ctl.resolve_search() {
            let tick = self.ctl.state().tick;
            self.record(|ts| SessionRecord::SearchResolved { ts, tick });
        }
    }

    /// Runs one control tick and returns its telemetry snapshot.
    pub fn step(&mut self) -> Telemetry {
        if self.ctl.search_ready() {
            self.resolve_search();
        }
        self.tick()
    }

    fn tick(&mut self) -> Telemetry {
        let input = self.input.take();
        self.ctl.tick(input, self.dt).expect("period is positive");
        let telemetry = self.telemetry();
        self.record(|ts| SessionRecord::Telemetry {
            ts,
            telemetry: telemetry.clone(),
        });
        telemetry
    }

    pub fn telemetry(&self) -> Telemetry {
        Telemetry::new(
            self.ctl.state(),
            self.ctl.last_em_sample(),
            self.ctl.roadmap().stats(),
            self.ack_seq,
        )
    }

    pub fn drain_events(&mut self) -> Vec<ControllerEvent> {
        self.ctl.drain_events()
    }
}

/// Everything a replay reproduces.
#[derive(Debug)]
pub struct ReplayOutput {
    pub config: RunConfig,
    pub roadmap: Roadmap,
    pub trajectory: Vec<TrajectoryRecord>,
    pub telemetry: Vec<Telemetry>,
    pub outcomes: Vec<RecoveryOutcome>,
    /// `None` when the session contains no completed recovery.
    pub report: Option<RecoveryReport>,
}

impl ReplayOutput {
    /// One JSON object per tick.
    pub fn write_trajectory(&self, out: &mut impl Write) -> io::Result<()> {
        for r in &self.trajectory {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Error samples of a list of completed recoveries.
pub fn outcome_samples(outcomes: &[RecoveryOutcome]) -> Vec<ErrorSample> {
    outcomes
        .iter()
        .map(|o| {
            ErrorSample::new(
                o.label.clone(),
                o.position_error_mm,
                Some(o.orientation_error_deg),
            )
        })
        .collect()
}

fn parse_line(line: &str, n: usize) -> Result<SessionRecord, SessionError> {
    serde_json::from_str(line).map_err(|e| SessionError::Malformed {
        line: n,
        message: e.to_string(),
    })
}

/// Re-executes a recorded session. With `config` set, that configuration
/// replaces the recorded one (e.g. a different seed or backlash); the
/// command stream and search timing stay as recorded.
pub fn replay(log: impl BufRead, config: Option<RunConfig>) -> Result<ReplayOutput, SessionError> {
    let mut lines = log.lines().enumerate();
    let (_, first) = lines.next().ok_or(SessionError::Truncated { records: 0 })?;
    let header = parse_line(&first?, 1)?;
    let recorded = match header {
        SessionRecord::Header {
            format_version,
            config,
            ..
        } => {
            if format_version != SESSION_FORMAT_VERSION {
                return Err(SessionError::VersionMismatch {
                    found: format_version,
                });
            }
            config
        }
        _ => {
            return Err(SessionError::Malformed {
                line: 1,
                message: "first record must be the header".into(),
            })
        }
    };
    let cfg = config.unwrap_or(recorded);
    let mut engine = Engine::new(cfg.clone(), SearchPolicy::Scripted);
    engine.ctl.record_trajectory(true);

    let mut telemetry = Vec::new();
    let mut records = 0u64;
    let mut last_ts = 0u64;
    let mut pending_tail: Option<(usize, SessionError)> = None;
    for (i, line) in lines {
        let n = i + 1;
        let line = line?;
        if let Some((_, e)) = pending_tail.take() {
            // an unparsable line followed by more lines is corruption
            return Err(e);
        }
        let record = match parse_line(&line, n) {
            Ok(r) => r,
            Err(e) => {
                pending_tail = Some((n, e));
                continue;
            }
        };
        let ts = match &record {
            SessionRecord::Command { ts, .. }
            | SessionRecord::SearchResolved { ts, .. }
            | SessionRecord::Telemetry { ts, .. }
            | SessionRecord::Trailer { ts, .. } => *ts,
            SessionRecord::Header { .. } => {
                return Err(SessionError::Malformed {
                    line: n,
                    message: "repeated header".into(),
                })
            }
        };
        if ts <= last_ts {
            return Err(SessionError::Malformed {
                line: n,
                message: format!("timestamp {ts} does not increase"),
            });
        }
        last_ts = ts;
        let diverged = |message: String| SessionError::Divergence { line: n, message };
        match record {
            SessionRecord::Command {
                tick, seq, command, ..
            } => {
                if tick != engine.ctl.state().tick {
                    return Err(diverged(format!(
                        "command recorded at tick {tick}, replay is at {}",
                        engine.ctl.state().tick
                    )));
                }
                // rejected commands were rejected in the original run too
                let _ = engine.submit(seq, command);
            }
            SessionRecord::SearchResolved { tick, .. } => {
                if tick != engine.ctl.state().tick || !engine.ctl.resolve_search() {
                    return Err(diverged(format!("no search to resolve at tick {tick}")));
                }
            }
            SessionRecord::Telemetry {
                telemetry: recorded,
                ..
            } => {
                let t = engine.tick();
                if t.tick != recorded.tick || t.mode != recorded.mode {
                    return Err(diverged(format!(
                        "tick {} mode {} vs recorded tick {} mode {}",
                        t.tick, t.mode, recorded.tick, recorded.mode
                    )));
                }
                telemetry.push(t);
            }
            SessionRecord::Trailer {
                records: expected, ..
            } => {
                if expected != records {
                    return Err(SessionError::Truncated { records });
                }
                engine.drain_events();
                let outcomes = engine.ctl.outcomes().to_vec();
                let report = build_report(&outcome_samples(&outcomes)).ok();
                return Ok(ReplayOutput {
                    config: cfg,
                    roadmap: engine.ctl.roadmap().clone(),
                    trajectory: engine.ctl.take_trajectory(),
                    telemetry,
                    outcomes,
                    report,
                });
            }
            SessionRecord::Header { .. } => unreachable!(),
        }
        records += 1;
        engine.drain_events();
    }
    Err(SessionError::Truncated { records })
}
