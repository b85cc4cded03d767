//! Rotation primitives.
//!
//! Quaternions follow the Hamilton convention and are stored as
//! `(x, y, z, w)`, i.e. vector part first. `R(a ⊗ b) = R(a) R(b)`, and a
//! quaternion `q_AB` maps vectors expressed in `B` into `A`.
//!
//! Storage is nalgebra's [`UnitQuaternion`], whose coordinate order already
//! matches `(x, y, z, w)`.

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3, Vector4};
use crate::error::So3Error;

pub type Quat = UnitQuaternion<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Smallest `|q_w|` (after sign canonicalization) for which the `2 q_v / q_w`
/// rotation residual is considered usable.
pub const MIN_RESIDUAL_QW: f64 = 0.01;

/// Builds a unit quaternion from `(x, y, z, w)` components, normalizing.
pub fn quat_from_xyzw(x: f64, y: f64, z: f64, w: f64) -> Quat {
    UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
}

/// `(x, y, z, w)` components.
pub fn quat_to_xyzw(q: &Quat) -> [f64; 4] {
    [q.i, q.j, q.k, q.w]
}

/// Sign-canonical representative with `q_w >= 0`.
pub fn canonical(q: &Quat) -> Quat {
    if q.w < 0.0 {
        Quat::new_unchecked(-q.into_inner())
    } else {
        *q
    }
}

/// Hamilton product `a ⊗ b`, renormalized.
pub fn quat_multiply(a: &Quat, b: &Quat) -> Quat {
    let (av, aw) = (a.imag(), a.w);
    let (bv, bw) = (b.imag(), b.w);
    let v = aw * bv + bw * av + av.cross(&bv);
    let w = aw * bw - av.dot(&bv);
    UnitQuaternion::from_quaternion(Quaternion::from_parts(w, v))
}

pub fn quat_inverse(q: &Quat) -> Quat {
    q.inverse()
}

/// Rotation matrix of a unit quaternion.
pub fn quat_to_rotmat(q: &Quat) -> Mat3 {
    let (x, y, z, w) = (q.i, q.j, q.k, q.w);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Skew-symmetric cross-product matrix: `skew(v) * w == v × w`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Quaternion-rate matrix for a body angular rate `w`.
///
/// Acting on `(x, y, z, w)` coordinates, `0.5 * omega_matrix(w) * q` is the
/// derivative of `q` when it rotates at body rate `w`, i.e. `0.5 q ⊗ [w, 0]`.
pub fn omega_matrix(w: &Vec3) -> Matrix4<f64> {
    let s = skew(w);
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-s));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(w);
    m.fixed_view_mut::<1, 3>(3, 0).copy_from(&(-w.transpose()));
    m
}

/// Quaternion as a `(x, y, z, w)` 4-vector.
pub fn quat_coords(q: &Quat) -> Vector4<f64> {
    Vector4::new(q.i, q.j, q.k, q.w)
}

/// Exponential map from a rotation vector to a unit quaternion.
///
/// For small angles this reduces to `(theta / 2, 1)`; the series branch keeps
/// the result exact to machine precision near zero.
pub fn small_angle_quat(theta: &Vec3) -> Quat {
    let angle = theta.norm();
    let half = 0.5 * angle;
    let (s, c) = if angle < 1e-6 {
        // sin(a/2)/a ≈ 1/2 - a²/48, cos(a/2) ≈ 1 - a²/8
        let a2 = angle * angle;
        (0.5 - a2 / 48.0, 1.0 - a2 / 8.0)
    } else {
        (half.sin() / angle, half.cos())
    };
    UnitQuaternion::from_quaternion(Quaternion::from_parts(c, theta * s))
}

/// Inverse of [`small_angle_quat`] (principal branch).
pub fn quat_to_rotvec(q: &Quat) -> Vec3 {
    let q = canonical(q);
    let v = q.imag();
    let n = v.norm();
    if n < 1e-12 {
        return 2.0 * v;
    }
    let angle = 2.0 * n.atan2(q.w);
    v * (angle / n)
}

/// Small-angle rotation residual `2 q_v / q_w` of an error quaternion.
///
/// The quaternion is sign-canonicalized first. Errors close to 180° make the
/// ratio meaningless and are reported as [`So3Error::ResidualTooLarge`].
pub fn quat_residual_to_rotvec(q_err: &Quat) -> Result<Vec3, So3Error> {
    let q = canonical(q_err);
    if q.w < MIN_RESIDUAL_QW {
        return Err(So3Error::ResidualTooLarge { qw: q.w });
    }
    Ok(q.imag() * (2.0 / q.w))
}

/// Rigid transform `T_AB`: frame `B` relative to `A`, expressed in `A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub p: Vec3,
    pub q: Quat,
}

impl Pose {
    pub fn new(p: Vec3, q: Quat) -> Self {
        Self { p, q }
    }

    pub fn identity() -> Self {
        Self::new(Vec3::zeros(), Quat::identity())
    }

    pub fn rotation(&self) -> Mat3 {
        quat_to_rotmat(&self.q)
    }

    /// `T_AB ∘ T_BC = T_AC`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            p: self.p + self.rotation() * other.p,
            q: quat_multiply(&self.q, &other.q),
        }
    }

    pub fn inverse(&self) -> Pose {
        let q = self.q.inverse();
        Pose {
            p: -(quat_to_rotmat(&q) * self.p),
            q,
        }
    }

    pub fn transform_point(&self, x: &Vec3) -> Vec3 {
        self.p + self.rotation() * x
    }
}

/// Average of rigid transforms: arithmetic mean of the translations and the
/// rotation closest to the mean of the quaternion outer products, which is
/// insensitive to quaternion signs. `None` for an empty slice.
pub fn mean_pose(poses: &[Pose]) -> Option<Pose> {
    if poses.is_empty() {
        return None;
    }
    let mut m = Matrix4::zeros();
    let mut p = Vec3::zeros();
    for pose in poses {
        let c = pose.q.coords;
        m += c * c.transpose();
        p += pose.p;
    }
    let eig = m.symmetric_eigen();
    let best = eig.eigenvalues.imax();
    let c = eig.eigenvectors.column(best).into_owned();
    let q = Quat::new_normalize(Quaternion::from(c));
    Some(Pose::new(p / poses.len() as f64, canonical(&q)))
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}
