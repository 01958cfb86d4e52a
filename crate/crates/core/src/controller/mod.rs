//! The control loop: teleoperation, the recovery state machine, roadmap
//! feeding and sensor emulation.
//!
//! ```text
//!   idle ──request──▶ search ──path──▶ execution ──last waypoint──▶ completed
//!    ▲                  │                  │                            │
//!    └──────cancel/err──┘◀──────cancel─────┘◀───────next command────────┘
//! ```

mod actuation;
mod em;

use std::collections::HashMap;
use std::sync::Arc;
use std::thread::JoinHandle;

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{clamp, distance, Configuration, AXES};
use crate::kinematics::{forward_kinematics, tip_rates_to_joint_rates, TipPose};
use crate::planner::{astar, snap_to_roadmap, PlanError, RecoveryPath};
use crate::roadmap::{Roadmap, RoadmapError, VertexId, ViewBookmark};
use crate::runconfig::RunConfig;
use crate::validation::{orientation_error, tip_position_error};

pub use actuation::{ActuationModel, Actuators};
pub use em::{EmSample, EmSensor, EmSensorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Idle,
    Search,
    Execution,
    Completed,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Idle => "idle",
            Mode::Search => "search",
            Mode::Execution => "execution",
            Mode::Completed => "completed",
        }
    }

    fn can_become(self, to: Mode) -> bool {
        use Mode::*;
        matches!(
            (self, to),
            (Idle, Search)
                | (Search, Execution)
                | (Search, Idle)
                | (Execution, Completed)
                | (Execution, Idle)
                | (Completed, Idle)
        )
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Operator rate command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeleopCommand {
    /// Joint rates (deg/s, deg/s, deg/s, mm/s).
    JogKnob([f64; AXES]),
    /// Tip twist in the tip frame (mm/s, then deg/s).
    JogTip([f64; 6]),
}

impl TeleopCommand {
    pub fn is_finite(&self) -> bool {
        match self {
            TeleopCommand::JogKnob(r) => r.iter().all(|v| v.is_finite()),
            TeleopCommand::JogTip(r) => r.iter().all(|v| v.is_finite()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            TeleopCommand::JogKnob(r) => r.iter().all(|&v| v == 0.0),
            TeleopCommand::JogTip(r) => r.iter().all(|&v| v == 0.0),
        }
    }
}

/// How a pending search is collected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchPolicy {
    /// Plan during the request; the result is picked up on the next tick.
    #[default]
    Blocking,
    /// Plan on a worker thread; each tick polls for completion.
    Background,
    /// Plan on a worker thread; only [`Controller::resolve_search`] collects
    /// the result. Used to replay a recorded resolution tick.
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("controller is busy ({0})")]
    Busy(Mode),
    #[error(transparent)]
    Roadmap(#[from] RoadmapError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("dt must be positive and finite, got {0}")]
    InvalidDt(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryProgress {
    pub label: String,
    pub path: Arc<RecoveryPath>,
    /// Number of waypoints reached so far.
    pub reached: usize,
}

impl RecoveryProgress {
    pub fn remaining_cost(&self) -> f64 {
        self.path.remaining_cost(self.reached)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub tick: u64,
    pub tick_rate: f64,
    pub mode: Mode,
    pub teleop_active: bool,
    /// Commanded configuration.
    pub current_q: Configuration,
    /// Configuration after actuation error.
    pub actual_q: Configuration,
    pub active_path: Option<RecoveryProgress>,
}

/// A completed recovery, measured at the tick it completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOutcome {
    pub label: String,
    pub tick: u64,
    pub target_q: Configuration,
    pub recovered_q: Configuration,
    pub actual_q: Configuration,
    /// Ground-truth tip pose when the view was saved.
    pub reference_pose: TipPose,
    pub true_pose: TipPose,
    pub measured: EmSample,
    /// EM-measured tip vs reference tip (mm).
    pub position_error_mm: f64,
    /// EM-measured imaging axis vs reference imaging axis (degrees).
    pub orientation_error_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControllerEvent {
    ModeChanged {
        tick: u64,
        from: Mode,
        to: Mode,
    },
    InputDropped {
        tick: u64,
        reason: String,
    },
    IsolatedVertex {
        tick: u64,
        vertex: VertexId,
    },
    ViewSaved {
        tick: u64,
        bookmark: ViewBookmark,
    },
    SearchResolved {
        tick: u64,
        label: String,
        waypoints: Option<usize>,
    },
    RecoveryFailed {
        tick: u64,
        label: String,
        error: String,
    },
    RecoveryCancelled {
        tick: u64,
        label: String,
        reached: usize,
    },
    RecoveryCompleted {
        tick: u64,
        outcome: Box<RecoveryOutcome>,
    },
}

/// One line of the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub tick: u64,
    pub mode: Mode,
    pub current_q: Configuration,
    pub actual_q: Configuration,
    pub em_sample: EmSample,
}

enum PendingSearch {
    Ready(Result<RecoveryPath, PlanError>),
    Running(JoinHandle<Result<RecoveryPath, PlanError>>),
}

impl PendingSearch {
    fn is_ready(&self) -> bool {
        match self {
            PendingSearch::Ready(_) => true,
            PendingSearch::Running(h) => h.is_finished(),
        }
    }

    fn wait(self) -> Result<RecoveryPath, PlanError> {
        match self {
            PendingSearch::Ready(r) => r,
            PendingSearch::Running(h) => h.join().expect("planner thread panicked"),
        }
    }
}

struct LatchedJog {
    command: TeleopCommand,
    received_at: f64,
}

pub struct Controller {
    cfg: RunConfig,
    policy: SearchPolicy,
    roadmap: Roadmap,
    state: ControllerState,
    actuators: Actuators,
    em: EmSensor,
    /// Simulated time (s).
    time: f64,
    jog: Option<LatchedJog>,
    /// Label, result handle and the tick at which the search was requested.
    pending: Option<(String, PendingSearch, u64)>,
    references: HashMap<String, TipPose>,
    outcomes: Vec<RecoveryOutcome>,
    events: Vec<ControllerEvent>,
    last_em: EmSample,
    trajectory: Option<Vec<TrajectoryRecord>>,
    /// A search was collected since the last tick; that tick does not move.
    resolved_since_tick: bool,
}

impl Controller {
    /// `cfg` is assumed valid (see [`RunConfig::validate`]).
    pub fn new(cfg: RunConfig) -> Self {
        Self::with_policy(cfg, SearchPolicy::default())
    }

    pub fn with_policy(cfg: RunConfig, policy: SearchPolicy) -> Self {
        let q0 = cfg.initial_configuration;
        let mut em = EmSensor::new(cfg.em_sensor, cfg.actuation.rng_seed);
        let last_em = em.sample(&forward_kinematics(&q0, &cfg.catheter), 0);
        Self {
            roadmap: Roadmap::new(cfg.epsilon).expect("validated epsilon"),
            state: ControllerState {
                tick: 0,
                tick_rate: cfg.tick_rate_hz,
                mode: Mode::Idle,
                teleop_active: false,
                current_q: q0,
                actual_q: q0,
                active_path: None,
            },
            actuators: Actuators::new(cfg.actuation, q0),
            em,
            time: 0.0,
            jog: None,
            pending: None,
            references: HashMap::new(),
            outcomes: Vec::new(),
            events: Vec::new(),
            last_em,
            trajectory: None,
            resolved_since_tick: false,
            policy,
            cfg,
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn mode(&self) -> Mode {
        self.state.mode
    }

    pub fn roadmap(&self) -> &Roadmap {
        &self.roadmap
    }

    pub fn search_policy(&self) -> SearchPolicy {
        self.policy
    }

    pub fn set_search_policy(&mut self, policy: SearchPolicy) {
        self.policy = policy;
    }

    /// Most recent EM reading taken by the loop.
    pub fn last_em_sample(&self) -> &EmSample {
        &self.last_em
    }

    /// Completed recoveries, oldest first.
    pub fn outcomes(&self) -> &[RecoveryOutcome] {
        &self.outcomes
    }

    /// Ground-truth tip pose recorded when `label` was saved.
    pub fn reference_pose(&self, label: &str) -> Option<&TipPose> {
        self.references.get(label)
    }

    pub fn drain_events(&mut self) -> Vec<ControllerEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn record_trajectory(&mut self, on: bool) {
        self.trajectory = on.then(Vec::new);
    }

    pub fn take_trajectory(&mut self) -> Vec<TrajectoryRecord> {
        self.trajectory
            .as_mut()
            .map(std::mem::take)
            .unwrap_or_default()
    }

    pub fn search_pending(&self) -> bool {
        self.pending.is_some()
    }

    /// Fresh EM reading of the current actual pose.
    pub fn read_em_sensor(&mut self) -> EmSample {
        self.em.sample(
            &forward_kinematics(&self.state.actual_q, &self.cfg.catheter),
            self.state.tick,
        )
    }

    fn set_mode(&mut self, to: Mode) {
        let from = self.state.mode;
        debug_assert!(from.can_become(to), "illegal transition {from} -> {to}");
        self.state.mode = to;
        if to == Mode::Idle {
            self.state.active_path = None;
        }
        self.events.push(ControllerEvent::ModeChanged {
            tick: self.state.tick,
            from,
            to,
        });
    }

    fn observe(&mut self, q: Configuration) {
        match self.roadmap.observe(q) {
            Ok(obs) if obs.is_isolated() => self.events.push(ControllerEvent::IsolatedVertex {
                tick: self.state.tick,
                vertex: obs.vertex,
            }),
            Ok(_) => {}
            Err(e) => self.events.push(ControllerEvent::InputDropped {
                tick: self.state.tick,
                reason: e.to_string(),
            }),
        }
    }

    /// Bookmarks the vertex of the current configuration.
    pub fn save_view(&mut self, label: &str) -> Result<ViewBookmark, ControllerError> {
        if matches!(self.state.mode, Mode::Search | Mode::Execution) {
            return Err(ControllerError::Busy(self.state.mode));
        }
        let bookmark = self.roadmap.save_view(label)?;
        let truth = forward_kinematics(&self.state.actual_q, &self.cfg.catheter);
        self.references.insert(label.to_owned(), truth);
        self.events.push(ControllerEvent::ViewSaved {
            tick: self.state.tick,
            bookmark: bookmark.clone(),
        });
        Ok(bookmark)
    }

    /// Starts a search for `label` from the vertex nearest the commanded
    /// configuration. A request in `completed` first returns to `idle`.
    pub fn request_recovery(&mut self, label: &str) -> Result<(), ControllerError> {
        match self.state.mode {
            Mode::Idle => {}
            Mode::Completed => {}
            busy => return Err(ControllerError::Busy(busy)),
        }
        let goal = self
            .roadmap
            .view(label)
            .ok_or_else(|| PlanError::UnknownView(label.to_owned()))?
            .vertex_id;
        let start = snap_to_roadmap(&self.roadmap, &self.state.current_q)?;
        if self.state.mode == Mode::Completed {
            self.set_mode(Mode::Idle);
        }
        self.jog = None;
        self.state.teleop_active = false;
        let pending = match self.policy {
            SearchPolicy::Blocking => PendingSearch::Ready(astar(&self.roadmap, start, goal)),
            SearchPolicy::Background | SearchPolicy::Scripted => {
                let snapshot = Arc::new(self.roadmap.clone());
                PendingSearch::Running(std::thread::spawn(move || astar(&snapshot, start, goal)))
            }
        };
        self.pending = Some((label.to_owned(), pending, self.state.tick));
        self.set_mode(Mode::Search);
        Ok(())
    }

    /// Collects the pending search result, waiting for it if necessary.
    /// Returns whether a search was resolved.
    pub fn resolve_search(&mut self) -> bool {
        let Some((label, pending, _)) = self.pending.take() else {
            return false;
        };
        let tick = self.state.tick;
        self.resolved_since_tick = true;
        match pending.wait() {
            Ok(path) => {
                self.events.push(ControllerEvent::SearchResolved {
                    tick,
                    label: label.clone(),
                    waypoints: Some(path.len()),
                });
                self.state.active_path = Some(RecoveryProgress {
                    label,
                    path: Arc::new(path),
                    reached: 0,
                });
                self.set_mode(Mode::Execution);
            }
            Err(e) => {
                self.events.push(ControllerEvent::SearchResolved {
                    tick,
                    label: label.clone(),
                    waypoints: None,
                });
                self.events.push(ControllerEvent::RecoveryFailed {
                    tick,
                    label,
                    error: e.to_string(),
                });
                self.set_mode(Mode::Idle);
            }
        }
        true
    }

    /// Whether the pending search has a result waiting.
    pub fn search_done(&self) -> bool {
        self.pending.as_ref().is_some_and(|(_, p, _)| p.is_ready())
    }

    /// Whether the loop would collect the pending search at the next tick.
    /// A search always spans at least one full tick.
    pub fn search_ready(&self) -> bool {
        match (&self.pending, self.policy) {
            (None, _) | (_, SearchPolicy::Scripted) => false,
            (Some((_, _, at)), _) if *at == self.state.tick => false,
            (Some(_), SearchPolicy::Blocking) => true,
            (Some((_, p, _)), SearchPolicy::Background) => p.is_ready(),
        }
    }

    /// Aborts a search or execution. Returns false (and does nothing) in
    /// idle or completed.
    pub fn cancel(&mut self) -> bool {
        match self.state.mode {
            Mode::Search => {
                // a running worker is detached; its result is never read
                self.pending = None;
                self.set_mode(Mode::Idle);
                true
            }
            Mode::Execution => {
                if let Some(progress) = &self.state.active_path {
                    self.events.push(ControllerEvent::RecoveryCancelled {
                        tick: self.state.tick,
                        label: progress.label.clone(),
                        reached: progress.reached,
                    });
                }
                // the halt point lies between two waypoints within epsilon,
                // so it joins the roadmap connected
                let q = self.state.current_q;
                self.observe(q);
                self.set_mode(Mode::Idle);
                true
            }
            Mode::Idle | Mode::Completed => false,
        }
    }

    fn latch_input(&mut self, input: TeleopCommand) {
        let tick = self.state.tick;
        if !input.is_finite() {
            self.events.push(ControllerEvent::InputDropped {
                tick,
                reason: "non-finite jog rates".into(),
            });
            return;
        }
        if matches!(self.state.mode, Mode::Search | Mode::Execution) {
            if !input.is_zero() {
                self.events.push(ControllerEvent::InputDropped {
                    tick,
                    reason: format!("jog ignored during {}", self.state.mode),
                });
            }
            return;
        }
        self.jog = Some(LatchedJog {
            command: input,
            received_at: self.time,
        });
    }

    fn jog_rates(&mut self) -> Option<Configuration> {
        let jog = self.jog.as_ref()?;
        let timeout = self.cfg.jog_timeout_s;
        if timeout > 0.0 && self.time - jog.received_at > timeout + 1e-9 {
            self.jog = None;
            return None;
        }
        let rates = match jog.command {
            TeleopCommand::JogKnob(r) => Configuration::from_array(r),
            TeleopCommand::JogTip(t) => {
                let v = Vector6::from_column_slice(&t);
                let q = tip_rates_to_joint_rates(&v, &self.state.current_q, &self.cfg.catheter);
                Configuration::new(q[0], q[1], q[2], q[3])
            }
        };
        let limits = self.cfg.actuation.rate_limits;
        let capped = rates.map(|i, r| r.clamp(-limits[i], limits[i]));
        (capped.max_abs() > 0.0).then_some(capped)
    }

    /// Moves along the active path with one tick's motion budget. Returns
    /// waypoints reached this tick.
    fn advance(&mut self, dt: f64) -> Vec<Configuration> {
        let caps = self.cfg.actuation.rate_limits.map(|r| r * dt);
        let tol = self.cfg.waypoint_tolerance;
        let Some(progress) = self.state.active_path.as_mut() else {
            return Vec::new();
        };
        let mut current = self.state.current_q;
        let mut budget = 1.0;
        let mut arrived = Vec::new();
        while progress.reached < progress.path.len() {
            let target = progress.path.waypoints[progress.reached];
            let delta = target.sub(current);
            // fraction of a full tick needed to cover `delta` at the rate limits
            let need = (0..AXES)
                .map(|i| delta.axis(i).abs() / caps[i])
                .fold(0.0, f64::max);
            if need <= budget || distance(&current, &target) <= tol {
                current = target;
                budget -= need.min(budget);
                progress.reached += 1;
                arrived.push(target);
            } else {
                current = current.add(delta.scale(budget / need));
                break;
            }
        }
        self.state.current_q = current;
        arrived
    }

    /// Advances the loop by `dt` seconds.
    pub fn tick(
        &mut self,
        input: Option<TeleopCommand>,
        dt: f64,
    ) -> Result<&ControllerState, ControllerError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(ControllerError::InvalidDt(dt));
        }
        let previous = self.state.current_q;
        if self.search_ready() {
            self.resolve_search();
        }
        let resolved = std::mem::take(&mut self.resolved_since_tick);
        if let Some(input) = input {
            self.latch_input(input);
        }
        let mut arrived = Vec::new();
        match self.state.mode {
            Mode::Idle | Mode::Completed => match self.jog_rates() {
                Some(rates) => {
                    if self.state.mode == Mode::Completed {
                        self.set_mode(Mode::Idle);
                    }
                    let target = previous.add(rates.scale(dt));
                    self.state.current_q = clamp(&target, &self.cfg.joint_limits);
                    self.state.teleop_active = true;
                }
                None => self.state.teleop_active = false,
            },
            Mode::Search => {}
            Mode::Execution if resolved => {}
            Mode::Execution => arrived = self.advance(dt),
        }

        let moved = self.state.current_q != previous;
        if moved && self.state.mode != Mode::Execution {
            if self.roadmap.is_empty() {
                self.observe(previous);
            }
            let q = self.state.current_q;
            self.observe(q);
        }
        for q in arrived {
            self.observe(q);
        }
        self.state.actual_q = self.actuators.update(&previous, &self.state.current_q);
        let truth = forward_kinematics(&self.state.actual_q, &self.cfg.catheter);
        self.last_em = self.em.sample(&truth, self.state.tick);

        let finished = self
            .state
            .active_path
            .as_ref()
            .is_some_and(|p| self.state.mode == Mode::Execution && p.reached == p.path.len());
        if finished {
            self.complete(truth);
        }
        if let Some(log) = self.trajectory.as_mut() {
            log.push(TrajectoryRecord {
                tick: self.state.tick,
                mode: self.state.mode,
                current_q: self.state.current_q,
                actual_q: self.state.actual_q,
                em_sample: self.last_em,
            });
        }
        self.state.tick += 1;
        self.time += dt;
        Ok(&self.state)
    }

    fn complete(&mut self, truth: TipPose) {
        let progress = self
            .state
            .active_path
            .as_ref()
            .expect("execution has a path");
        let label = progress.label.clone();
        let target_q = *progress.path.goal();
        let reference_pose = self.references.get(&label).copied().unwrap_or_else(|| {
            // views loaded from a file have no recorded pose; use the vertex
            forward_kinematics(&target_q, &self.cfg.catheter)
        });
        let measured = self.last_em;
        let outcome = RecoveryOutcome {
            label,
            tick: self.state.tick,
            target_q,
            recovered_q: self.state.current_q,
            actual_q: self.state.actual_q,
            reference_pose,
            true_pose: truth,
            measured,
            position_error_mm: tip_position_error(
                &measured.pose.position,
                &reference_pose.position,
            ),
            orientation_error_deg: orientation_error(
                &measured.pose.imaging_axis(),
                &reference_pose.imaging_axis(),
            )
            .expect("imaging axes are unit vectors"),
        };
        self.outcomes.push(outcome.clone());
        self.events.push(ControllerEvent::RecoveryCompleted {
            tick: self.state.tick,
            outcome: Box::new(outcome),
        });
        self.set_mode(Mode::Completed);
    }

    /// Replaces the roadmap, e.g. with one loaded from disk. Only allowed
    /// while idle.
    pub fn load_roadmap(&mut self, roadmap: Roadmap) -> Result<(), ControllerError> {
        if self.state.mode != Mode::Idle {
            return Err(ControllerError::Busy(self.state.mode));
        }
        self.roadmap = roadmap;
        self.references.clear();
        Ok(())
    }
}
