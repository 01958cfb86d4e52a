use nalgebra::{Matrix3, Matrix3xX, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::{LabeledPointSet, ValidationError};

/// Ratio of the second to the largest singular value below which a point
/// cloud is treated as collinear.
const COLLINEAR_RATIO: f64 = 1e-9;

/// `p ↦ rotation · p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Rotation3<f64>,
    /// mm
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotates a direction; translation does not apply.
    pub fn apply_direction(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.inverse();
        Self {
            rotation: r,
            translation: -(r * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    /// Maps source-frame points onto the destination frame.
    pub transform: RigidTransform,
    /// Root-mean-square residual after alignment (mm).
    pub fre: f64,
    pub correspondences: usize,
}

fn is_collinear(centered: &Matrix3xX<f64>) -> bool {
    let sv = centered.clone().singular_values();
    let mut s = [sv[0], sv[1], sv[2]];
    s.sort_by(|a, b| b.total_cmp(a));
    s[0] == 0.0 || s[1] <= COLLINEAR_RATIO * s[0]
}

/// Newton steps on `tr(R·H)` over small rotations `exp([ω]×)·R`.
fn refine(mut r: Rotation3<f64>, h: &Matrix3<f64>) -> Rotation3<f64> {
    for _ in 0..3 {
        let k = r.matrix() * h;
        let g = Vector3::new(
            k[(1, 2)] - k[(2, 1)],
            k[(2, 0)] - k[(0, 2)],
            k[(0, 1)] - k[(1, 0)],
        );
        let s = (k + k.transpose()) * 0.5;
        let hess = Matrix3::identity() * s.trace() - s;
        let Some(w) = hess.try_inverse().map(|inv| inv * g) else {
            break;
        };
        if !w.iter().all(|x| x.is_finite()) || w.norm() > 1e-3 {
            break;
        }
        r = Rotation3::new(w) * r;
        r.renormalize();
        if w.norm() < 1e-15 {
            break;
        }
    }
    r
}

/// Least-squares rigid alignment of corresponding points (matched by name)
/// from `src` onto `dst`, with every correspondence weighted equally.
///
/// Closed-form SVD solution; the determinant is forced to +1 so the result
/// is never a reflection.
pub fn rigid_register(
    src: &LabeledPointSet,
    dst: &LabeledPointSet,
) -> Result<Registration, ValidationError> {
    let pairs = src.correspondences(dst);
    let (a, b): (Vec<_>, Vec<_>) = pairs.iter().map(|(_, p, q)| (*p, *q)).unzip();
    register_points(&a, &b)
}

/// Same as [`rigid_register`] on already-paired point lists.
pub fn register_points(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<Registration, ValidationError> {
    let n = src.len().min(dst.len());
    if n < 3 {
        return Err(ValidationError::TooFewCorrespondences(n));
    }
    let (src, dst) = (&src[..n], &dst[..n]);
    let centroid = |pts: &[Vector3<f64>]| pts.iter().sum::<Vector3<f64>>() / n as f64;
    let (cs, cd) = (centroid(src), centroid(dst));
    let a = Matrix3xX::from_columns(&src.iter().map(|p| p - cs).collect::<Vec<_>>());
    let b = Matrix3xX::from_columns(&dst.iter().map(|p| p - cd).collect::<Vec<_>>());
    if is_collinear(&a) || is_collinear(&b) {
        return Err(ValidationError::Degenerate);
    }

    let h: Matrix3<f64> = &a * b.transpose();
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();
    let mut order = [0, 1, 2];
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let (u1, u2) = (
        u.column(order[0]).into_owned(),
        u.column(order[1]).into_owned(),
    );
    let (v1, v2) = (
        v.column(order[0]).into_owned(),
        v.column(order[1]).into_owned(),
    );
    // third axis pair from the two dominant ones keeps det = +1
    let m = v1 * u1.transpose() + v2 * u2.transpose() + v1.cross(&v2) * u1.cross(&u2).transpose();
    let rotation = refine(Rotation3::from_matrix_unchecked(m), &h);
    let transform = RigidTransform::new(rotation, cd - rotation * cs);

    let sse: f64 = src
        .iter()
        .zip(dst)
        .map(|(p, q)| (transform.apply(p) - q).norm_squared())
        .sum();
    Ok(Registration {
        transform,
        fre: (sse / n as f64).sqrt(),
        correspondences: n,
    })
}
