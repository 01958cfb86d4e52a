use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

use viewnav_core::config::{distance, Configuration, AXES};
use viewnav_core::controller::{ControllerEvent, SearchPolicy};
use viewnav_core::kinematics::{forward_kinematics, jacobian_with_step, CatheterParams};
use viewnav_core::protocol::{Body, Command, ErrorPayload, WireMessage};
use viewnav_core::{Controller, Mode, RunConfig, TeleopCommand};

const LABELS: [&str; 3] = ["AV", "MV", "TV"];

#[derive(Debug, Clone)]
enum Op {
    Knob([f64; 4], u8),
    Tip([f64; 6], u8),
    Wait(u8),
    Save(usize),
    Recover(usize),
    Cancel,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (prop::array::uniform4(-30.0..30.0f64), 1..40u8).prop_map(|(r, n)| Op::Knob(r, n)),
        1 => (prop::array::uniform6(-15.0..15.0f64), 1..20u8).prop_map(|(t, n)| Op::Tip(t, n)),
        2 => (1..60u8).prop_map(Op::Wait),
        2 => (0..LABELS.len()).prop_map(Op::Save),
        3 => (0..LABELS.len()).prop_map(Op::Recover),
        1 => Just(Op::Cancel),
    ]
}

fn legal(from: Mode, to: Mode) -> bool {
    use Mode::*;
    matches!(
        (from, to),
        (Idle, Search)
            | (Search, Execution)
            | (Search, Idle)
            | (Execution, Completed)
            | (Execution, Idle)
            | (Completed, Idle)
    )
}

fn segment_distance(p: &Configuration, a: &Configuration, b: &Configuration) -> f64 {
    let ab = b.sub(*a);
    let len2: f64 = (0..AXES).map(|i| ab.axis(i).powi(2)).sum();
    if len2 == 0.0 {
        return distance(p, a);
    }
    let ap = p.sub(*a);
    let t = ((0..AXES).map(|i| ap.axis(i) * ab.axis(i)).sum::<f64>() / len2).clamp(0.0, 1.0);
    distance(p, &a.add(ab.scale(t)))
}

struct Checker {
    ctl: Controller,
    dt: f64,
    caps: [f64; 4],
    tol: f64,
    mode: Mode,
    search_since: Option<u64>,
    /// Where the current execution started and how far it got.
    exec: Option<(Configuration, usize)>,
}

impl Checker {
    fn new(cfg: RunConfig, policy: SearchPolicy) -> Self {
        let dt = cfg.tick_period_s();
        let caps = cfg.actuation.rate_limits.map(|r| r * dt);
        let tol = cfg.waypoint_tolerance;
        Self {
            ctl: Controller::with_policy(cfg, policy),
            dt,
            caps,
            tol,
            mode: Mode::Idle,
            search_since: None,
            exec: None,
        }
    }

    fn check_events(&mut self) -> Result<(), TestCaseError> {
        for e in self.ctl.drain_events() {
            if let ControllerEvent::ModeChanged { tick, from, to } = e {
                prop_assert_eq!(from, self.mode, "event chain broken at tick {}", tick);
                prop_assert!(
                    legal(from, to),
                    "illegal {} -> {} at tick {}",
                    from,
                    to,
                    tick
                );
                match to {
                    Mode::Search => self.search_since = Some(tick),
                    Mode::Execution => {
                        let since = self.search_since.take().expect("execution without search");
                        prop_assert!(tick > since, "search resolved on its own tick {}", tick);
                    }
                    _ => {}
                }
                self.mode = to;
            }
        }
        prop_assert_eq!(self.mode, self.ctl.mode());
        Ok(())
    }

    fn tick(&mut self, input: Option<TeleopCommand>) -> Result<(), TestCaseError> {
        let before = self.ctl.state().current_q;
        let was_executing = self.ctl.mode() == Mode::Execution;
        let st = self.ctl.tick(input, self.dt).unwrap().clone();
        for i in 0..AXES {
            let step = (st.current_q.axis(i) - before.axis(i)).abs();
            prop_assert!(
                step <= self.caps[i] + self.tol + 1e-12,
                "axis {} moved {} in one tick",
                i,
                step
            );
        }
        if st.mode != Mode::Execution {
            self.exec = None;
        }
        if let Some(p) = st
            .active_path
            .as_ref()
            .filter(|_| st.mode == Mode::Execution)
        {
            let (origin, last_reached) = *self.exec.get_or_insert((before, 0));
            prop_assert!(p.reached >= last_reached, "waypoints went backwards");
            if !was_executing {
                prop_assert_eq!(p.reached, 0);
                prop_assert_eq!(st.current_q, before);
            } else if p.reached < p.path.len() {
                let from = if p.reached == 0 {
                    origin
                } else {
                    p.path.waypoints[p.reached - 1]
                };
                let d = segment_distance(&st.current_q, &from, &p.path.waypoints[p.reached]);
                prop_assert!(d <= 1e-9, "left the path by {} mm/deg", d);
            }
            self.exec = Some((origin, p.reached));
        }
        self.check_events()
    }

    fn run(&mut self, op: &Op) -> Result<(), TestCaseError> {
        match *op {
            Op::Knob(r, n) => {
                for _ in 0..n {
                    self.tick(Some(TeleopCommand::JogKnob(r)))?;
                }
            }
            Op::Tip(t, n) => {
                for _ in 0..n {
                    self.tick(Some(TeleopCommand::JogTip(t)))?;
                }
            }
            Op::Wait(n) => {
                for _ in 0..n {
                    self.tick(None)?;
                }
            }
            Op::Save(i) => {
                let _ = self.ctl.save_view(LABELS[i]);
            }
            Op::Recover(i) => {
                let _ = self.ctl.request_recovery(LABELS[i]);
            }
            Op::Cancel => {
                self.ctl.cancel();
            }
        }
        self.check_events()
    }
}

fn noisy_config(backlash: f64, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.actuation.backlash_deg = [backlash; 2];
    cfg.actuation.rng_seed = seed;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn controller_sessions_keep_their_invariants(
        ops in prop::collection::vec(op(), 1..40),
        backlash in 0.0..2.0f64,
        seed in any::<u64>(),
        background in any::<bool>(),
    ) {
        let policy = if background { SearchPolicy::Background } else { SearchPolicy::Blocking };
        let mut c = Checker::new(noisy_config(backlash, seed), policy);
        for op in &ops {
            c.run(op)?;
        }
        // let any outstanding recovery finish
        for _ in 0..5000 {
            if matches!(c.ctl.mode(), Mode::Idle | Mode::Completed) {
                break;
            }
            if c.ctl.mode() == Mode::Search {
                std::thread::sleep(std::time::Duration::from_micros(200));
            }
            c.tick(None)?;
        }
        prop_assert!(matches!(c.ctl.mode(), Mode::Idle | Mode::Completed));

        let map = c.ctl.roadmap();
        let eps = map.epsilon();
        for &(a, b) in map.edges() {
            let d = distance(map.vertex(a).unwrap(), map.vertex(b).unwrap());
            prop_assert!(d <= eps, "edge of length {}", d);
        }
        for v in map.vertices() {
            prop_assert!(c.ctl.config().joint_limits.contains(v));
        }
        for o in c.ctl.outcomes() {
            prop_assert_eq!(o.recovered_q, o.target_q);
        }
    }

    #[test]
    fn commands_survive_the_wire(
        seq in 1..u64::MAX / 2,
        rates in prop::array::uniform4(-1e3..1e3f64),
        twist in prop::array::uniform6(-1e3..1e3f64),
        label in "[A-Za-z0-9 _-]{1,16}",
        which in 0..5usize,
    ) {
        let cmd = match which {
            0 => Command::JogKnob(rates),
            1 => Command::JogTip(twist),
            2 => Command::SaveView(label),
            3 => Command::RecoverView(label),
            _ => Command::Cancel,
        };
        let msg = WireMessage::new(seq, cmd.clone().into_body());
        let text = msg.to_json();
        let back = WireMessage::parse(&text).unwrap();
        prop_assert_eq!(back.seq, seq);
        prop_assert_eq!(WireMessage::peek_seq(&text), Some(seq));
        prop_assert_eq!(back.body.kind(), msg.body.kind());
        prop_assert_eq!(back.body.into_command().unwrap(), cmd);
    }

    #[test]
    fn outbound_bodies_survive_the_wire(
        seq in 1..u64::MAX / 2,
        code in "[a-z_]{1,12}",
        message in ".{0,40}",
        reply in prop::option::of(any::<u64>()),
        tick in any::<u32>(),
    ) {
        let bodies = [
            Body::Error(ErrorPayload { code, message, in_reply_to: reply }),
            Body::ViewList { views: Vec::new() },
            Body::Event(ControllerEvent::ModeChanged { tick: tick as u64, from: Mode::Idle, to: Mode::Search }),
            Body::Event(ControllerEvent::InputDropped { tick: tick as u64, reason: "x".into() }),
        ];
        for body in bodies {
            let msg = WireMessage::new(seq, body);
            let back = WireMessage::parse(&msg.to_json()).unwrap();
            prop_assert_eq!(back, msg);
        }
    }

    #[test]
    fn tip_frame_stays_orthonormal(
        phi1 in -90.0..90.0f64,
        phi2 in -90.0..90.0f64,
        phi3 in -180.0..180.0f64,
        d4 in 0.0..120.0f64,
    ) {
        let p = CatheterParams::default();
        let pose = forward_kinematics(&Configuration::new(phi1, phi2, phi3, d4), &p);
        let m = pose.orientation.matrix();
        prop_assert!((m.transpose() * m - nalgebra::Matrix3::identity()).norm() < 1e-12);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
        // the arc never reaches farther than its length from its base
        let base = Vector3::new(0.0, 0.0, p.shaft_offset_mm + d4);
        prop_assert!((pose.position - base).norm() <= p.bend_length_mm + 1e-9);
    }

    #[test]
    fn roll_and_insertion_act_rigidly(
        phi1 in -90.0..90.0f64,
        phi2 in -90.0..90.0f64,
        phi3 in -90.0..90.0f64,
        d4 in 0.0..60.0f64,
        roll in -90.0..90.0f64,
        push in 0.0..60.0f64,
    ) {
        let p = CatheterParams::default();
        let q = Configuration::new(phi1, phi2, phi3, d4);
        let moved = Configuration::new(phi1, phi2, phi3 + roll, d4 + push);
        let (a, b) = (forward_kinematics(&q, &p), forward_kinematics(&moved, &p));
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), roll.to_radians());
        let expected = rz * a.position + Vector3::new(0.0, 0.0, push);
        prop_assert!((b.position - expected).norm() < 1e-9);
        prop_assert!(((rz * a.orientation).matrix() - b.orientation.matrix()).norm() < 1e-12);
    }

    #[test]
    fn jacobian_agrees_with_richardson_extrapolation(
        phi1 in -85.0..85.0f64,
        phi2 in -85.0..85.0f64,
        phi3 in -175.0..175.0f64,
        d4 in 5.0..115.0f64,
    ) {
        let p = CatheterParams::default();
        let q = Configuration::new(phi1, phi2, phi3, d4);
        let coarse = jacobian_with_step(&q, &p, 1e-2);
        let fine = jacobian_with_step(&q, &p, 5e-3);
        let extrapolated = (fine * 4.0 - coarse) / 3.0;
        let used = viewnav_core::kinematics::jacobian(&q, &p);
        let err = (used - extrapolated).abs().max();
        prop_assert!(err < 1e-6 * (1.0 + extrapolated.abs().max()), "max deviation {}", err);
    }
}
