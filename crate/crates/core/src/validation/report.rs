use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ValidationError;

/// Published in-vivo results (mean, std): target, tip position error (mm),
/// imager orientation error (degrees). Kept as a comparison row in reports.
pub const ANIMAL_STUDY_REFERENCE: [(&str, f64, f64, f64, f64); 3] = [
    ("Aortic Valve", 2.19, 0.91, 3.08, 2.49),
    ("Mitral Valve", 1.71, 0.74, 4.87, 2.09),
    ("Tricuspid Valve", 2.38, 0.96, 3.85, 1.70),
];

/// One recovery measured against its reference viewing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub target: String,
    pub position_error_mm: f64,
    /// Orientation is not measured for every sample.
    pub orientation_error_deg: Option<f64>,
}

impl ErrorSample {
    pub fn new(
        target: impl Into<String>,
        position_error_mm: f64,
        orientation_error_deg: Option<f64>,
    ) -> Self {
        Self {
            target: target.into(),
            position_error_mm,
            orientation_error_deg,
        }
    }
}

/// Mean and sample standard deviation (n − 1 denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// `std` is reported as 0 because only one sample exists.
    pub single_sample: bool,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self {
            n,
            mean,
            std,
            single_sample: n == 1,
        })
    }

    /// Root mean square of the underlying values, reconstructed from the
    /// summary.
    pub fn rms(&self) -> f64 {
        let n = self.n as f64;
        let var_pop = if self.n > 1 {
            self.std * self.std * (n - 1.0) / n
        } else {
            0.0
        };
        (self.mean * self.mean + var_pop).sqrt()
    }

    fn cell(&self) -> String {
        let flag = if self.single_sample { "*" } else { "" };
        format!("{:.2} ± {:.2}{flag} (n={})", self.mean, self.std, self.n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub target: String,
    pub position_mm: Summary,
    pub orientation_deg: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub target: String,
    pub position_mm: (f64, f64),
    pub orientation_deg: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub targets: Vec<TargetReport>,
    pub overall_position_mm: Summary,
    pub overall_orientation_deg: Option<Summary>,
    pub reference: Vec<ReferenceRow>,
}

/// Groups samples by target (first-appearance order) and summarizes each.
pub fn build_report(samples: &[ErrorSample]) -> Result<RecoveryReport, ValidationError> {
    if samples.is_empty() {
        return Err(ValidationError::NoSamples);
    }
    let mut order: Vec<&str> = Vec::new();
    for s in samples {
        if !order.contains(&s.target.as_str()) {
            order.push(&s.target);
        }
    }
    build_report_for(&order, samples)
}

/// Like [`build_report`] but with an explicit target list; a listed target
/// without samples is an error.
pub fn build_report_for(
    targets: &[&str],
    samples: &[ErrorSample],
) -> Result<RecoveryReport, ValidationError> {
    if samples.is_empty() {
        return Err(ValidationError::NoSamples);
    }
    let mut rows = Vec::with_capacity(targets.len());
    for &target in targets {
        let group: Vec<&ErrorSample> = samples.iter().filter(|s| s.target == target).collect();
        let positions: Vec<f64> = group.iter().map(|s| s.position_error_mm).collect();
        let orientations: Vec<f64> = group
            .iter()
            .filter_map(|s| s.orientation_error_deg)
            .collect();
        let position_mm = Summary::of(&positions)
            .ok_or_else(|| ValidationError::EmptyTarget(target.to_owned()))?;
        rows.push(TargetReport {
            target: target.to_owned(),
            position_mm,
            orientation_deg: Summary::of(&orientations),
        });
    }
    let all_pos: Vec<f64> = samples.iter().map(|s| s.position_error_mm).collect();
    let all_or: Vec<f64> = samples
        .iter()
        .filter_map(|s| s.orientation_error_deg)
        .collect();
    Ok(RecoveryReport {
        targets: rows,
        overall_position_mm: Summary::of(&all_pos).expect("non-empty"),
        overall_orientation_deg: Summary::of(&all_or),
        reference: ANIMAL_STUDY_REFERENCE
            .iter()
            .map(|&(t, pm, ps, om, os)| ReferenceRow {
                target: t.to_owned(),
                position_mm: (pm, ps),
                orientation_deg: (om, os),
            })
            .collect(),
    })
}

impl RecoveryReport {
    pub fn target(&self, name: &str) -> Option<&TargetReport> {
        self.targets.iter().find(|t| t.target == name)
    }

    /// Plain-text table: one row per target, then the overall row and the
    /// published in-vivo comparison rows.
    pub fn to_table(&self) -> String {
        let width = self
            .targets
            .iter()
            .map(|t| t.target.len())
            .chain(self.reference.iter().map(|r| r.target.len() + 12))
            .max()
            .unwrap_or(0)
            .max(16);
        let mut out = String::new();
        let header = (
            "",
            "Catheter tip position error [mm]",
            "Imager orientation error [°]",
        );
        let rule = "-".repeat(width + 2 + 34 + 3 + 30);
        let _ = writeln!(
            out,
            "{:<width$} | {:<34} | {}",
            header.0, header.1, header.2
        );
        let _ = writeln!(out, "{rule}");
        for t in &self.targets {
            let orient = t
                .orientation_deg
                .map(|s| s.cell())
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<width$} | {:<34} | {}",
                t.target,
                t.position_mm.cell(),
                orient
            );
        }
        let _ = writeln!(out, "{rule}");
        let orient = self
            .overall_orientation_deg
            .map(|s| s.cell())
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<width$} | {:<34} | {}",
            "All targets",
            self.overall_position_mm.cell(),
            orient
        );
        let _ = writeln!(out, "{rule}");
        for r in &self.reference {
            let _ = writeln!(
                out,
                "{:<width$} | {:<34} | {}",
                format!("{} (in vivo)", r.target),
                format!("{:.2} ± {:.2}", r.position_mm.0, r.position_mm.1),
                format!("{:.2} ± {:.2}", r.orientation_deg.0, r.orientation_deg.1),
            );
        }
        if self.targets.iter().any(|t| t.position_mm.single_sample) {
            let _ = writeln!(
                out,
                "* single sample; standard deviation undefined, shown as 0"
            );
        }
        out
    }
}
