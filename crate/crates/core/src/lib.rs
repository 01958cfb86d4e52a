//! Roadmap-based view recovery for a simulated 4-DoF tendon-driven imaging
//! catheter.
//!
//! An operator drives the catheter by jog commands; every visited motor
//! configuration is recorded in a [`roadmap::Roadmap`], views are bookmarked
//! by label, and a recovery query retraces the roadmap with A* back to any
//! saved view. The [`validation`] module measures how well a recovered pose
//! reproduces the saved one.

pub mod bench;
pub mod config;
pub mod controller;
pub mod kinematics;
pub mod planner;
pub mod protocol;
pub mod roadmap;
pub mod runconfig;
pub mod session;
pub mod validation;

pub use config::{clamp, distance, Configuration, JointLimits};
pub use controller::{Controller, ControllerState, Mode, TeleopCommand};
pub use kinematics::{forward_kinematics, CatheterParams, TipPose};
pub use planner::{plan, RecoveryPath};
pub use roadmap::{Roadmap, VertexId, ViewBookmark};
pub use runconfig::RunConfig;
