//! Homogeneous rigid transforms.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{domain, Result};

/// A rotation plus a translation in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn from_rotation(r: Matrix3<f64>) -> Self {
        Self::new(r, Vector3::zeros())
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_rotation(rot_x(angle))
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_rotation(rot_y(angle))
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_rotation(rot_z(angle))
    }

    /// `self * other`, i.e. apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 16-element layout used by every JSON output.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 16 {
            return Err(domain(format!(
                "transform needs 16 elements, got {}",
                v.len()
            )));
        }
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let translation = Vector3::new(v[3], v[7], v[11]);
        Ok(Self::new(rotation, translation))
    }

    /// Max deviation of `RᵀR` from identity, and `|det R - 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let e = (r.transpose() * r - Matrix3::identity()).abs().max();
        e.max((r.determinant() - 1.0).abs())
    }

    /// Rotation vector of `self.rotation` (axis times angle, radians).
    pub fn rotation_vector(&self) -> Vector3<f64> {
        log_so3(&self.rotation)
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v: Vec<f64> = Vec::deserialize(d)?;
        RigidTransform::from_row_major(&v).map_err(serde::de::Error::custom)
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation of `angle` radians about a unit `axis`.
pub fn rot_axis(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner()
}

/// Logarithm map of SO(3) as a rotation vector, angle in `[0, π]`.
///
/// Tolerates matrices a few ulps off orthonormal, where the plain
/// `acos((tr R - 1) / 2)` would produce NaN.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    // v = sin(θ) a
    let v = 0.5
        * Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        );
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s = v.norm();
    let theta = s.atan2(c);
    if theta < 1e-6 {
        return v * (1.0 + theta * theta / 6.0);
    }
    if PI - theta > 1e-4 {
        return v * (theta / s);
    }
    // Near π the antisymmetric part vanishes; read the axis from
    // (R + Rᵀ)/2 - cI = (1 - c) a aᵀ instead.
    let m = 0.5 * (r + r.transpose()) - Matrix3::identity() * c;
    let i = (0..3)
        .max_by(|&a, &b| m[(a, a)].total_cmp(&m[(b, b)]))
        .expect("three diagonal entries");
    let mut axis: Vector3<f64> = m.column(i).into();
    axis /= axis.norm();
    if axis.dot(&v) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Nearest rotation (in Frobenius norm) to an arbitrary 3x3 matrix.
pub fn project_to_so3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}
