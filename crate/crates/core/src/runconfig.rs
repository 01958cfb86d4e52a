//! Versioned run configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Configuration, JointLimits, AXES, AXIS_NAMES};
use crate::controller::{ActuationModel, EmSensorSpec};
use crate::kinematics::{CatheterParams, ModelError};
use crate::roadmap::DEFAULT_EPSILON;

pub const RUN_CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid TOML: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported run config format version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Limits(#[from] ConfigError),
    #[error(transparent)]
    Catheter(#[from] ModelError),
    #[error("{field} must be {requirement}, got {value}")]
    OutOfRange {
        field: String,
        requirement: &'static str,
        value: f64,
    },
    #[error(
        "one tick at the configured rate limits can move {step:.4}, more than epsilon {epsilon}"
    )]
    StepExceedsEpsilon { step: f64, epsilon: f64 },
    #[error("initial configuration {0} is outside the joint limits")]
    InitialOutsideLimits(Configuration),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub tick_rate_hz: f64,
    pub telemetry_rate_hz: f64,
    pub epsilon: f64,
    /// Distance at which a waypoint counts as reached.
    pub waypoint_tolerance: f64,
    /// A jog command stops applying this long after it was received;
    /// zero disables the timeout.
    pub jog_timeout_s: f64,
    pub port: u16,
    pub initial_configuration: Configuration,
    pub joint_limits: JointLimits,
    pub catheter: CatheterParams,
    pub actuation: ActuationModel,
    pub em_sensor: EmSensorSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: RUN_CONFIG_FORMAT_VERSION,
            tick_rate_hz: 50.0,
            telemetry_rate_hz: 20.0,
            epsilon: DEFAULT_EPSILON,
            waypoint_tolerance: 1e-3,
            jog_timeout_s: 0.25,
            port: 8080,
            initial_configuration: Configuration::ZERO,
            joint_limits: JointLimits::default(),
            catheter: CatheterParams::default(),
            actuation: ActuationModel::default(),
            em_sensor: EmSensorSpec::default(),
        }
    }
}

fn require(
    field: &str,
    value: f64,
    ok: bool,
    requirement: &'static str,
) -> Result<(), RunConfigError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(RunConfigError::OutOfRange {
            field: field.to_owned(),
            requirement,
            value,
        })
    }
}

impl RunConfig {
    /// Noise-free actuation and sensing with otherwise default settings.
    pub fn ideal() -> Self {
        Self {
            em_sensor: EmSensorSpec::IDEAL,
            ..Self::default()
        }
    }

    pub fn tick_period_s(&self) -> f64 {
        1.0 / self.tick_rate_hz
    }

    /// Largest per-axis motion in a single tick.
    pub fn max_step(&self) -> Configuration {
        Configuration::from_array(self.actuation.rate_limits).scale(self.tick_period_s())
    }

    pub fn validate(&self) -> Result<(), RunConfigError> {
        if self.format_version != RUN_CONFIG_FORMAT_VERSION {
            return Err(RunConfigError::UnsupportedVersion(self.format_version));
        }
        require(
            "tick_rate_hz",
            self.tick_rate_hz,
            self.tick_rate_hz > 0.0,
            "positive",
        )?;
        require(
            "telemetry_rate_hz",
            self.telemetry_rate_hz,
            self.telemetry_rate_hz > 0.0 && self.telemetry_rate_hz <= self.tick_rate_hz,
            "positive and at most tick_rate_hz",
        )?;
        require("epsilon", self.epsilon, self.epsilon > 0.0, "positive")?;
        require(
            "waypoint_tolerance",
            self.waypoint_tolerance,
            self.waypoint_tolerance >= 0.0 && self.waypoint_tolerance < self.epsilon,
            "non-negative and below epsilon",
        )?;
        require(
            "jog_timeout_s",
            self.jog_timeout_s,
            self.jog_timeout_s >= 0.0,
            "non-negative",
        )?;
        for axis in 0..AXES {
            let name = AXIS_NAMES[axis];
            let rate = self.actuation.rate_limits[axis];
            require(
                &format!("actuation.rate_limits.{name}"),
                rate,
                rate > 0.0,
                "positive",
            )?;
            let sigma = self.actuation.noise_sigma[axis];
            require(
                &format!("actuation.noise_sigma.{name}"),
                sigma,
                sigma >= 0.0,
                "non-negative",
            )?;
        }
        for (axis, b) in self.actuation.backlash_deg.iter().enumerate() {
            require(
                &format!("actuation.backlash_deg.{}", AXIS_NAMES[axis]),
                *b,
                *b >= 0.0,
                "non-negative",
            )?;
        }
        let em = &self.em_sensor;
        require(
            "em_sensor.position_rms_mm",
            em.position_rms_mm,
            em.position_rms_mm >= 0.0,
            "non-negative",
        )?;
        require(
            "em_sensor.orientation_rms_deg",
            em.orientation_rms_deg,
            em.orientation_rms_deg >= 0.0,
            "non-negative",
        )?;
        self.joint_limits.validate()?;
        self.catheter.validate()?;
        self.initial_configuration.check_finite()?;
        if !self.joint_limits.contains(&self.initial_configuration) {
            return Err(RunConfigError::InitialOutsideLimits(
                self.initial_configuration,
            ));
        }
        let step = crate::config::distance(&self.max_step(), &Configuration::ZERO);
        if step > self.epsilon {
            return Err(RunConfigError::StepExceedsEpsilon {
                step,
                epsilon: self.epsilon,
            });
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, RunConfigError> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| RunConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
        RunConfig::ideal().validate().unwrap();
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.actuation.backlash_deg = [1.5, 0.5];
        cfg.actuation.rng_seed = 99;
        cfg.joint_limits.d4.hi = 80.0;
        let text = cfg.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file() {
        let cfg = RunConfig::from_toml_str(
            "tick_rate_hz = 100.0\n[actuation]\nrng_seed = 5\n[em_sensor]\nposition_rms_mm = 2.0\n",
        )
        .unwrap();
        assert_eq!(cfg.tick_rate_hz, 100.0);
        assert_eq!(cfg.actuation.rng_seed, 5);
        assert_eq!(
            cfg.actuation.rate_limits,
            ActuationModel::default().rate_limits
        );
        assert_eq!(cfg.em_sensor.orientation_rms_deg, 0.5);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(
            RunConfig::from_toml_str("format_version = 2"),
            Err(RunConfigError::UnsupportedVersion(2))
        ));
        assert!(matches!(
            RunConfig::from_toml_str("bogus = 1"),
            Err(RunConfigError::Parse(_))
        ));
        assert!(matches!(
            RunConfig::from_toml_str("tick_rate_hz = 5.0\ntelemetry_rate_hz = 5.0"),
            Err(RunConfigError::StepExceedsEpsilon { .. })
        ));
        assert!(matches!(
            RunConfig::from_toml_str("[actuation]\nnoise_sigma = [0.0, -1.0, 0.0, 0.0]"),
            Err(RunConfigError::OutOfRange { .. })
        ));
        assert!(matches!(
            RunConfig::from_toml_str("initial_configuration = [0.0, 0.0, 0.0, -5.0]"),
            Err(RunConfigError::InitialOutsideLimits(_))
        ));
    }
}
