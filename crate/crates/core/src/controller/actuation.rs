//! Simulated actuators: how far the real knobs, roll and slide lag or
//! scatter around the commanded configuration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{Configuration, AXES};

/// Stream id for actuator noise; the EM sensor uses a different stream of
/// the same seed.
pub(crate) const ACTUATION_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuationModel {
    /// Deadband width on the two knobs (degrees).
    pub backlash_deg: [f64; 2],
    /// Zero-mean Gaussian positioning noise per axis (axis units), redrawn
    /// whenever that axis moves.
    pub noise_sigma: [f64; AXES],
    /// Maximum speed per axis (deg/s, deg/s, deg/s, mm/s).
    pub rate_limits: [f64; AXES],
    pub rng_seed: u64,
}

impl Default for ActuationModel {
    fn default() -> Self {
        Self {
            backlash_deg: [0.0; 2],
            noise_sigma: [0.0; AXES],
            rate_limits: [20.0, 20.0, 20.0, 10.0],
            rng_seed: 0,
        }
    }
}

impl ActuationModel {
    /// No backlash and no noise.
    pub fn is_ideal(&self) -> bool {
        self.backlash_deg
            .iter()
            .chain(self.noise_sigma.iter())
            .all(|&v| v == 0.0)
    }
}

/// Per-knob play operator plus positioning noise.
#[derive(Debug, Clone)]
pub struct Actuators {
    model: ActuationModel,
    /// Output of the deadband stage (before noise).
    played: [f64; AXES],
    offsets: [f64; AXES],
    rng: ChaCha8Rng,
}

impl Actuators {
    pub fn new(model: ActuationModel, start: Configuration) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(model.rng_seed);
        rng.set_stream(ACTUATION_STREAM);
        Self {
            model,
            played: start.to_array(),
            offsets: [0.0; AXES],
            rng,
        }
    }

    pub fn model(&self) -> &ActuationModel {
        &self.model
    }

    /// Advances the actuators from `previous` to `commanded` and returns the
    /// resulting actual configuration.
    pub fn update(&mut self, previous: &Configuration, commanded: &Configuration) -> Configuration {
        let (prev, cmd) = (previous.to_array(), commanded.to_array());
        for axis in 0..AXES {
            let c = cmd[axis];
            if axis < 2 {
                // the output only follows once the input crosses the band edge
                let half = 0.5 * self.model.backlash_deg[axis];
                if c - self.played[axis] > half {
                    self.played[axis] = c - half;
                } else if self.played[axis] - c > half {
                    self.played[axis] = c + half;
                }
            } else {
                self.played[axis] = c;
            }
            let sigma = self.model.noise_sigma[axis];
            if cmd[axis] != prev[axis] && sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
                self.offsets[axis] = normal.sample(&mut self.rng);
            }
        }
        Configuration::from_array(std::array::from_fn(|i| self.played[i] + self.offsets[i]))
    }
}
