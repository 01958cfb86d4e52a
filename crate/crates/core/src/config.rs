//! The 4-DoF motor configuration space of the catheter robot.
//!
//! A [`Configuration`] holds two knob angles, the bulk rotation (all in
//! degrees) and the axial translation (millimeters). Distances mix the two
//! units with 1 mm counted as equivalent to 1 degree.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of motor axes.
pub const AXES: usize = 4;

/// Axis labels, in serialization order.
pub const AXIS_NAMES: [&str; AXES] = ["phi1", "phi2", "phi3", "d4"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("non-finite value on axis {axis}: {value}")]
    NonFinite { axis: &'static str, value: f64 },
    #[error("invalid limits on axis {axis}: [{lo}, {hi}]")]
    InvalidLimits {
        axis: &'static str,
        lo: f64,
        hi: f64,
    },
}

/// A point in motor space: `(phi1, phi2, phi3, d4)`.
///
/// `phi1` is the anterior-posterior knob, `phi2` the right-left knob,
/// `phi3` the bulk rotation and `d4` the translation along the catheter axis.
/// Serialized everywhere as the ordered tuple `[phi1, phi2, phi3, d4]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Configuration {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
    pub d4: f64,
}

impl Configuration {
    pub const ZERO: Configuration = Configuration::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(phi1: f64, phi2: f64, phi3: f64, d4: f64) -> Self {
        Self {
            phi1,
            phi2,
            phi3,
            d4,
        }
    }

    pub const fn from_array(a: [f64; AXES]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub const fn to_array(self) -> [f64; AXES] {
        [self.phi1, self.phi2, self.phi3, self.d4]
    }

    pub fn axis(&self, i: usize) -> f64 {
        self.to_array()[i]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Fails with the first non-finite axis.
    pub fn check_finite(&self) -> Result<(), ConfigError> {
        for (axis, value) in AXIS_NAMES.iter().zip(self.to_array()) {
            if !value.is_finite() {
                return Err(ConfigError::NonFinite { axis, value });
            }
        }
        Ok(())
    }

    pub fn map(self, mut f: impl FnMut(usize, f64) -> f64) -> Self {
        let a = self.to_array();
        Self::from_array(std::array::from_fn(|i| f(i, a[i])))
    }

    pub fn zip_with(self, other: Self, mut f: impl FnMut(usize, f64, f64) -> f64) -> Self {
        let (a, b) = (self.to_array(), other.to_array());
        Self::from_array(std::array::from_fn(|i| f(i, a[i], b[i])))
    }

    pub fn sub(self, other: Self) -> Self {
        self.zip_with(other, |_, a, b| a - b)
    }

    pub fn add(self, other: Self) -> Self {
        self.zip_with(other, |_, a, b| a + b)
    }

    pub fn scale(self, s: f64) -> Self {
        self.map(|_, v| v * s)
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl From<[f64; AXES]> for Configuration {
    fn from(a: [f64; AXES]) -> Self {
        Self::from_array(a)
    }
}

impl From<Configuration> for [f64; AXES] {
    fn from(q: Configuration) -> Self {
        q.to_array()
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(phi1={:.4}°, phi2={:.4}°, phi3={:.4}°, d4={:.4} mm)",
            self.phi1, self.phi2, self.phi3, self.d4
        )
    }
}

/// Euclidean distance in motor space, treating 1 mm and 1° as equivalent.
pub fn distance(a: &Configuration, b: &Configuration) -> f64 {
    let (a, b) = (a.to_array(), b.to_array());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Closed interval `[lo, hi]` for one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct AxisRange {
    pub lo: f64,
    pub hi: f64,
}

impl AxisRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

impl From<[f64; 2]> for AxisRange {
    fn from(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

impl From<AxisRange> for [f64; 2] {
    fn from(r: AxisRange) -> Self {
        [r.lo, r.hi]
    }
}

/// Per-axis travel limits. Rotation is a bounded interval, not a circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLimits {
    pub phi1: AxisRange,
    pub phi2: AxisRange,
    pub phi3: AxisRange,
    pub d4: AxisRange,
}

impl Default for JointLimits {
    fn default() -> Self {
        Self {
            phi1: AxisRange::new(-90.0, 90.0),
            phi2: AxisRange::new(-90.0, 90.0),
            phi3: AxisRange::new(-180.0, 180.0),
            d4: AxisRange::new(0.0, 120.0),
        }
    }
}

impl JointLimits {
    pub fn ranges(&self) -> [AxisRange; AXES] {
        [self.phi1, self.phi2, self.phi3, self.d4]
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (axis, r) in AXIS_NAMES.iter().zip(self.ranges()) {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo < r.hi) {
                return Err(ConfigError::InvalidLimits {
                    axis,
                    lo: r.lo,
                    hi: r.hi,
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, q: &Configuration) -> bool {
        self.ranges()
            .iter()
            .zip(q.to_array())
            .all(|(r, v)| r.contains(v))
    }

    pub fn center(&self) -> Configuration {
        let r = self.ranges();
        Configuration::from_array(std::array::from_fn(|i| r[i].center()))
    }

    pub fn lower(&self) -> Configuration {
        let r = self.ranges();
        Configuration::from_array(std::array::from_fn(|i| r[i].lo))
    }

    pub fn upper(&self) -> Configuration {
        let r = self.ranges();
        Configuration::from_array(std::array::from_fn(|i| r[i].hi))
    }
}

/// Clamps every axis of `q` into its interval.
pub fn clamp(q: &Configuration, limits: &JointLimits) -> Configuration {
    let r = limits.ranges();
    q.map(|i, v| r[i].clamp(v))
}
