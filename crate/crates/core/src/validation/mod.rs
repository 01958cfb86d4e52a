//! Measurement pipeline for recovered views: tip position error, imager
//! orientation error, corresponding-point rigid registration and per-target
//! error reports.

mod points;
mod registration;
mod report;
mod study;

use nalgebra::Vector3;
use thiserror::Error;

pub use points::{LabeledPointSet, POINT_SET_FORMAT_VERSION};
pub use registration::{register_points, rigid_register, Registration, RigidTransform};
pub use report::{
    build_report, build_report_for, ErrorSample, RecoveryReport, ReferenceRow, Summary,
    TargetReport, ANIMAL_STUDY_REFERENCE,
};
pub use study::{evaluate_study, Study, StudyTrial, TrialKind, STUDY_FORMAT_VERSION, TIP_POINT};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("orientation vectors must be non-zero and finite")]
    ZeroVector,
    #[error("registration needs at least 3 corresponding points, found {0}")]
    TooFewCorrespondences(usize),
    #[error("corresponding points are collinear; rotation is undetermined")]
    Degenerate,
    #[error("no samples to report")]
    NoSamples,
    #[error("target {0:?} has no samples")]
    EmptyTarget(String),
    #[error("duplicate point name {0:?}")]
    DuplicatePoint(String),
    #[error("point {name:?} is not finite")]
    NonFinitePoint { name: String },
    #[error("missing point {0:?}")]
    MissingPoint(String),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("study error: {0}")]
    Study(String),
}

/// Euclidean distance between a recovered tip location and its reference (mm).
pub fn tip_position_error(p: &Vector3<f64>, p_ref: &Vector3<f64>) -> f64 {
    (p - p_ref).norm()
}

/// Unsigned angle between two imaging axes in degrees, `[0, 180]`.
///
/// Equals `acos(a·b / (|a||b|))`; computed as `atan2(|a×b|, a·b)`, so only
/// the directions of the inputs matter.
pub fn orientation_error(a: &Vector3<f64>, b: &Vector3<f64>) -> Result<f64, ValidationError> {
    let (na, nb) = (a.norm(), b.norm());
    if !(na > 0.0 && nb > 0.0 && na.is_finite() && nb.is_finite()) {
        return Err(ValidationError::ZeroVector);
    }
    Ok(a.cross(b).norm().atan2(a.dot(b)).to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;

    #[test]
    fn tip_error_examples() {
        let o = Vector3::zeros();
        assert_eq!(tip_position_error(&o, &o), 0.0);
        assert_eq!(tip_position_error(&o, &Vector3::new(3.0, 4.0, 0.0)), 5.0);
    }

    #[test]
    fn orientation_examples() {
        let a = Vector3::new(0.3, -1.2, 2.0);
        assert_eq!(orientation_error(&a, &a).unwrap(), 0.0);
        assert_eq!(
            orientation_error(&Vector3::x(), &Vector3::y()).unwrap(),
            90.0
        );
        assert_eq!(
            orientation_error(&Vector3::x(), &-Vector3::x()).unwrap(),
            180.0
        );
        assert_eq!(
            orientation_error(&Vector3::zeros(), &Vector3::x()),
            Err(ValidationError::ZeroVector)
        );
    }

    #[test]
    fn known_rotation_30_degrees() {
        let a = Vector3::new(1.0, 2.0, -0.5);
        let axis = Unit::new_normalize(a.cross(&Vector3::z()));
        let b = Rotation3::from_axis_angle(&axis, 30f64.to_radians()) * a;
        let err = orientation_error(&a, &b).unwrap();
        assert!((err - 30.0).abs() < 1e-9, "{err}");
    }

    fn arb_vec() -> impl Strategy<Value = Vector3<f64>> {
        prop::array::uniform3(-10.0f64..10.0)
            .prop_map(Vector3::from)
            .prop_filter("non-zero", |v| v.norm() > 1e-3)
    }

    proptest! {
        #[test]
        fn orientation_is_symmetric_and_scale_invariant(a in arb_vec(), b in arb_vec(), s in 0.01f64..100.0, t in 0.01f64..100.0) {
            let ab = orientation_error(&a, &b).unwrap();
            prop_assert_eq!(ab, orientation_error(&b, &a).unwrap());
            let scaled = orientation_error(&(a * s), &(b * t)).unwrap();
            prop_assert!((ab - scaled).abs() < 1e-5);
            prop_assert!((0.0..=180.0).contains(&ab));
        }
    }
}
