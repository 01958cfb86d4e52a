//! Constant-curvature kinematic model of the steerable catheter.
//!
//! The base frame sits at the sheath exit with +z along the insertion axis.
//! The bending section is a single circular arc of length `bend_length_mm`.
//! Knob angles map linearly to two orthogonal bend components
//! (`theta_ap = k * phi1`, `theta_rl = k * phi2`); the arc bends by
//! `theta = hypot(theta_ap, theta_rl)` in the plane at azimuth
//! `atan2(theta_rl, theta_ap)`. `phi3` rolls the whole distal assembly about
//! +z and `d4` translates it along +z.
//!
//! The transducer's image-plane normal is the tip frame's +x axis.

use nalgebra::{Matrix3, Matrix4, Rotation3, SMatrix, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Configuration, AXES};

/// Tip twist per unit joint rate. Rows: linear (mm) then angular (degrees),
/// both in the tip frame. Columns: `phi1, phi2, phi3, d4`.
pub type Jacobian = SMatrix<f64, 6, AXES>;

/// Finite-difference step for [`jacobian`], in axis units.
pub const JACOBIAN_STEP: f64 = 1e-4;

/// Damping factor for [`tip_rates_to_joint_rates`].
pub const DLS_DAMPING: f64 = 0.05;

/// Below this bend angle (radians) the arc coefficients use their series.
const SMALL_BEND: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("bend length must be positive, got {0}")]
    BendLength(f64),
    #[error("knob gain must be positive, got {0}")]
    KnobGain(f64),
    #[error("shaft offset must be finite and non-negative, got {0}")]
    ShaftOffset(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatheterParams {
    /// Length of the bending section (mm).
    pub bend_length_mm: f64,
    /// Degrees of tip bend per degree of knob rotation.
    pub knob_gain: f64,
    /// Distance from the sheath exit to the bending-section base at `d4 = 0` (mm).
    pub shaft_offset_mm: f64,
}

impl Default for CatheterParams {
    fn default() -> Self {
        Self {
            bend_length_mm: 60.0,
            knob_gain: 1.0,
            shaft_offset_mm: 0.0,
        }
    }
}

impl CatheterParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.bend_length_mm > 0.0 && self.bend_length_mm.is_finite()) {
            return Err(ModelError::BendLength(self.bend_length_mm));
        }
        if !(self.knob_gain > 0.0 && self.knob_gain.is_finite()) {
            return Err(ModelError::KnobGain(self.knob_gain));
        }
        if !(self.shaft_offset_mm >= 0.0 && self.shaft_offset_mm.is_finite()) {
            return Err(ModelError::ShaftOffset(self.shaft_offset_mm));
        }
        Ok(())
    }
}

/// Position and orientation of the transducer at the catheter tip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "TipPoseRepr", into = "TipPoseRepr")]
pub struct TipPose {
    /// Base frame, mm.
    pub position: Vector3<f64>,
    pub orientation: Rotation3<f64>,
}

impl TipPose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: Rotation3::identity(),
        }
    }

    /// Unit normal of the image plane, in the base frame.
    pub fn imaging_axis(&self) -> Vector3<f64> {
        self.orientation * Vector3::x()
    }

    /// Unit tangent of the catheter at the tip, in the base frame.
    pub fn heading(&self) -> Vector3<f64> {
        self.orientation * Vector3::z()
    }
}

#[derive(Serialize, Deserialize)]
struct TipPoseRepr {
    position: [f64; 3],
    /// Row-major.
    orientation: [[f64; 3]; 3],
    imaging_axis: [f64; 3],
}

impl From<TipPose> for TipPoseRepr {
    fn from(p: TipPose) -> Self {
        let m = p.orientation.matrix();
        let axis = p.imaging_axis();
        Self {
            position: p.position.into(),
            orientation: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
            imaging_axis: axis.into(),
        }
    }
}

impl From<TipPoseRepr> for TipPose {
    fn from(r: TipPoseRepr) -> Self {
        let m = Matrix3::from_fn(|i, j| r.orientation[i][j]);
        Self {
            position: Vector3::from(r.position),
            orientation: Rotation3::from_matrix_unchecked(m),
        }
    }
}

/// `(1 - cos t) / t^2` and `sin t / t`, smooth through `t = 0`.
fn arc_coefficients(t: f64) -> (f64, f64) {
    if t < SMALL_BEND {
        let t2 = t * t;
        (
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
        )
    } else {
        let s = (0.5 * t).sin();
        (2.0 * s * s / (t * t), t.sin() / t)
    }
}

pub fn forward_kinematics(q: &Configuration, p: &CatheterParams) -> TipPose {
    let ap = (p.knob_gain * q.phi1).to_radians();
    let rl = (p.knob_gain * q.phi2).to_radians();
    let theta = ap.hypot(rl);
    let (lateral, axial) = arc_coefficients(theta);
    let l = p.bend_length_mm;

    // Arc tip relative to the bending-section base, before roll.
    let arc_tip = Vector3::new(l * lateral * ap, l * lateral * rl, l * axial);
    // Bending about the axis perpendicular to the bending plane.
    let bend = Rotation3::new(Vector3::new(-rl, ap, 0.0));
    let roll = Rotation3::from_axis_angle(&Vector3::z_axis(), q.phi3.to_radians());

    TipPose {
        position: Vector3::new(0.0, 0.0, p.shaft_offset_mm + q.d4) + roll * arc_tip,
        orientation: roll * bend,
    }
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Tip-frame twist Jacobian by central differences of the forward model.
pub fn jacobian(q: &Configuration, p: &CatheterParams) -> Jacobian {
    jacobian_with_step(q, p, JACOBIAN_STEP)
}

pub fn jacobian_with_step(q: &Configuration, p: &CatheterParams, h: f64) -> Jacobian {
    let here = forward_kinematics(q, p);
    let rt = here.orientation.matrix().transpose();
    let mut jac = Jacobian::zeros();
    for axis in 0..AXES {
        let nudge = |s: f64| q.map(|i, v| if i == axis { v + s } else { v });
        let plus = forward_kinematics(&nudge(h), p);
        let minus = forward_kinematics(&nudge(-h), p);
        let linear = rt * (plus.position - minus.position) / (2.0 * h);
        let d_rot = rt * (plus.orientation.matrix() - minus.orientation.matrix()) / (2.0 * h);
        let angular = vee(&d_rot).map(f64::to_degrees);
        jac.fixed_view_mut::<3, 1>(0, axis).copy_from(&linear);
        jac.fixed_view_mut::<3, 1>(3, axis).copy_from(&angular);
    }
    jac
}

/// Damped least-squares joint rates for a desired tip twist
/// (`[vx, vy, vz]` mm/s, `[wx, wy, wz]` deg/s, tip frame).
pub fn tip_rates_to_joint_rates(
    v: &Vector6<f64>,
    q: &Configuration,
    p: &CatheterParams,
) -> Vector4<f64> {
    tip_rates_to_joint_rates_damped(v, q, p, DLS_DAMPING)
}

/// `Jᵀ (J Jᵀ + λ² I)⁻¹ v`, evaluated in the equivalent 4×4 form
/// `(JᵀJ + λ² I)⁻¹ Jᵀ v`.
pub fn tip_rates_to_joint_rates_damped(
    v: &Vector6<f64>,
    q: &Configuration,
    p: &CatheterParams,
    lambda: f64,
) -> Vector4<f64> {
    let j = jacobian(q, p);
    let jt = j.transpose();
    let normal: Matrix4<f64> = jt * j + Matrix4::identity() * (lambda * lambda);
    let rhs = jt * v;
    match normal.cholesky() {
        Some(c) => c.solve(&rhs),
        None => normal.lu().solve(&rhs).unwrap_or_else(Vector4::zeros),
    }
}
