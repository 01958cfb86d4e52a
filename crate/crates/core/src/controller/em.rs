//! Emulated electromagnetic tip tracker.

use nalgebra::{Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::kinematics::TipPose;

pub(crate) const EM_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmSensorSpec {
    /// RMS of the 3-D position error (mm).
    pub position_rms_mm: f64,
    /// RMS of the angle between measured and true imaging axis (degrees).
    pub orientation_rms_deg: f64,
}

impl Default for EmSensorSpec {
    fn default() -> Self {
        Self {
            position_rms_mm: 1.4,
            orientation_rms_deg: 0.5,
        }
    }
}

impl EmSensorSpec {
    pub const IDEAL: Self = Self {
        position_rms_mm: 0.0,
        orientation_rms_deg: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmSample {
    pub pose: TipPose,
    pub tick: u64,
}

/// Position noise is isotropic Gaussian; orientation noise is a small
/// rotation about an axis perpendicular to the imaging axis, so that the
/// whole perturbation shows up as imaging-axis error.
#[derive(Debug, Clone)]
pub struct EmSensor {
    spec: EmSensorSpec,
    position: Option<Normal<f64>>,
    tilt: Option<Normal<f64>>,
    rng: ChaCha8Rng,
}

impl EmSensor {
    pub fn new(spec: EmSensorSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(EM_STREAM);
        let normal =
            |sigma: f64| (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
        Self {
            spec,
            position: normal(spec.position_rms_mm / 3f64.sqrt()),
            tilt: normal(spec.orientation_rms_deg.to_radians() / 2f64.sqrt()),
            rng,
        }
    }

    pub fn spec(&self) -> &EmSensorSpec {
        &self.spec
    }

    pub fn sample(&mut self, truth: &TipPose, tick: u64) -> EmSample {
        let mut pose = *truth;
        if let Some(n) = self.position {
            pose.position += Vector3::from_fn(|_, _| n.sample(&mut self.rng));
        }
        if let Some(n) = self.tilt {
            // body y and z are orthogonal to the imaging axis (body x)
            let omega = Vector3::new(0.0, n.sample(&mut self.rng), n.sample(&mut self.rng));
            pose.orientation = truth.orientation * Rotation3::new(omega);
        }
        EmSample { pose, tick }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Configuration;
    use crate::kinematics::{forward_kinematics, CatheterParams};
    use crate::validation::orientation_error;

    #[test]
    fn ideal_sensor_is_exact() {
        let truth = forward_kinematics(
            &Configuration::new(20.0, -10.0, 45.0, 30.0),
            &CatheterParams::default(),
        );
        let mut em = EmSensor::new(EmSensorSpec::IDEAL, 1);
        let s = em.sample(&truth, 3);
        assert_eq!(s.pose, truth);
        assert_eq!(s.tick, 3);
    }

    #[test]
    fn noise_magnitudes_match_spec() {
        let truth = forward_kinematics(
            &Configuration::new(30.0, 15.0, -60.0, 50.0),
            &CatheterParams::default(),
        );
        let mut em = EmSensor::new(EmSensorSpec::default(), 42);
        let n = 4000;
        let (mut pos, mut ang) = (0.0, 0.0);
        for t in 0..n {
            let s = em.sample(&truth, t);
            pos += (s.pose.position - truth.position).norm_squared();
            ang += orientation_error(&s.pose.imaging_axis(), &truth.imaging_axis())
                .unwrap()
                .powi(2);
        }
        let (pos, ang) = ((pos / n as f64).sqrt(), (ang / n as f64).sqrt());
        assert!((pos - 1.4).abs() < 0.1, "{pos}");
        assert!((ang - 0.5).abs() < 0.04, "{ang}");
    }
}
