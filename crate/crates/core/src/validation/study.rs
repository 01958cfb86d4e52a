//! Offline evaluation of imaged recoveries.
//!
//! Each trial carries the catheter tip and anatomical landmarks labeled in
//! the reference volume (e.g. CT), and optionally the same landmarks plus the
//! transducer's imaging axis in the ultrasound volume. The first `initial`
//! trial of a target defines its reference tip location and imaging axis;
//! every `recovery` trial is measured against it.

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{
    build_report, orientation_error, rigid_register, tip_position_error, ErrorSample,
    LabeledPointSet, RecoveryReport, ValidationError,
};

pub const STUDY_FORMAT_VERSION: u32 = 1;

/// Name of the catheter tip point in every point set.
pub const TIP_POINT: &str = "tip";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialKind {
    Initial,
    Recovery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTrial {
    pub target: String,
    pub kind: TrialKind,
    /// Tip and landmarks in the reference volume.
    pub reference: LabeledPointSet,
    /// Same landmarks in the ultrasound volume, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ultrasound: Option<LabeledPointSet>,
    /// Image-plane normal in the ultrasound volume.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ultrasound_imaging_axis: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub format_version: u32,
    pub trials: Vec<StudyTrial>,
}

impl StudyTrial {
    /// Imaging axis carried into the reference frame through a landmark
    /// registration, if this trial has ultrasound data.
    fn axis_in_reference(&self) -> Result<Option<Vector3<f64>>, ValidationError> {
        match (&self.ultrasound, self.ultrasound_imaging_axis) {
            (Some(us), Some(axis)) => {
                let reg = rigid_register(us, &self.reference)?;
                Ok(Some(reg.transform.apply_direction(&Vector3::from(axis))))
            }
            _ => Ok(None),
        }
    }
}

/// Measures every recovery trial and summarizes per target.
pub fn evaluate_study(
    study: &Study,
) -> Result<(Vec<ErrorSample>, RecoveryReport), ValidationError> {
    if study.format_version != STUDY_FORMAT_VERSION {
        return Err(ValidationError::UnsupportedVersion(study.format_version));
    }
    let mut references: HashMap<&str, (Vector3<f64>, Option<Vector3<f64>>)> = HashMap::new();
    let mut samples = Vec::new();
    for (i, trial) in study.trials.iter().enumerate() {
        let tip = *trial.reference.require(TIP_POINT)?;
        let axis = trial.axis_in_reference()?;
        match trial.kind {
            TrialKind::Initial => {
                references
                    .entry(trial.target.as_str())
                    .or_insert((tip, axis));
            }
            TrialKind::Recovery => {
                let (ref_tip, ref_axis) =
                    references.get(trial.target.as_str()).ok_or_else(|| {
                        ValidationError::Study(format!(
                            "trial {i}: recovery of {:?} precedes its initial viewing",
                            trial.target
                        ))
                    })?;
                let orientation = match (axis, ref_axis) {
                    (Some(a), Some(b)) => Some(orientation_error(&a, b)?),
                    _ => None,
                };
                samples.push(ErrorSample::new(
                    trial.target.clone(),
                    tip_position_error(&tip, ref_tip),
                    orientation,
                ));
            }
        }
    }
    let report = build_report(&samples)?;
    Ok((samples, report))
}
