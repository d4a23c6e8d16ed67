//! Rigid-body poses in SE(3).

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Point3, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// A rigid-body transform: `p' = rotation * p + translation`.
///
/// Used for the camera pose in the robot base frame, the reference marker pose
/// and every intermediate link frame of the arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Transform {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
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

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Rotation3::identity(), Vector3::new(x, y, z))
    }

    pub fn from_rotation(rotation: Rotation3<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// Rotation about `axis` (need not be normalized) by `angle` radians.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::from_rotation(Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle))
    }

    /// Fixed-axis roll/pitch/yaw (URDF convention: `Rz(yaw) * Ry(pitch) * Rx(roll)`).
    pub fn from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        Self::new(
            Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]),
            Vector3::new(xyz[0], xyz[1], xyz[2]),
        )
    }

    /// Pose whose +z axis points from `eye` toward `target`, +x horizontal to the
    /// right of the view and +y completing a right-handed frame (image-down for a
    /// camera looking forward with `up` above).
    pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let mut x = z.cross(up);
        if x.norm() < 1e-12 {
            // looking along `up`; any horizontal axis will do
            x = z.cross(&Vector3::x());
            if x.norm() < 1e-12 {
                x = z.cross(&Vector3::y());
            }
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let m = Matrix3::from_columns(&[x, y, z]);
        Self::new(Rotation3::from_matrix_unchecked(m), *eye)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Transform) -> Transform {
        Transform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Transform {
        let inv = self.rotation.inverse();
        Transform {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Builds a transform from a 4x4 homogeneous matrix, re-orthonormalizing
    /// the rotation block.
    pub fn from_homogeneous(m: &Matrix4<f64>) -> Transform {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t: Vector3<f64> = m.fixed_view::<3, 1>(0, 3).into_owned();
        Transform::new(Rotation3::from_matrix(&r), t)
    }

    /// Orthonormality and determinant check on the rotation block.
    pub fn is_valid(&self, tol: f64) -> bool {
        let r = self.rotation.matrix();
        let ortho = (r.transpose() * r - Matrix3::identity()).amax();
        ortho <= tol
            && (r.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|v| v.is_finite())
    }

    pub fn origin(&self) -> Point3<f64> {
        Point3::from(self.translation)
    }

    pub fn rpy(&self) -> [f64; 3] {
        let (r, p, y) = self.rotation.euler_angles();
        [r, p, y]
    }

    /// Spherical interpolation of the rotation, linear in translation.
    pub fn interpolate(&self, other: &Transform, s: f64) -> Transform {
        let qa = UnitQuaternion::from_rotation_matrix(&self.rotation);
        let qb = UnitQuaternion::from_rotation_matrix(&other.rotation);
        let q = qa.try_slerp(&qb, s, 1e-12).unwrap_or(qa);
        Transform::new(
            q.to_rotation_matrix(),
            self.translation + (other.translation - self.translation) * s,
        )
    }
}

impl Mul for Transform {
    type Output = Transform;

    fn mul(self, rhs: Transform) -> Transform {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Transform> for &'a Transform {
    type Output = Transform;

    fn mul(self, rhs: &Transform) -> Transform {
        self.compose(rhs)
    }
}

/// On-disk pose representation: position in metres and fixed-axis roll/pitch/yaw
/// in radians.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PoseRepr {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl From<PoseRepr> for Transform {
    fn from(p: PoseRepr) -> Self {
        Transform::from_xyz_rpy(p.xyz, p.rpy)
    }
}

impl From<Transform> for PoseRepr {
    fn from(t: Transform) -> Self {
        PoseRepr {
            xyz: [t.translation.x, t.translation.y, t.translation.z],
            rpy: t.rpy(),
        }
    }
}
