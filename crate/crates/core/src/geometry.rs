//! Rigid-body transforms, ZYX Euler angles, the SE(3) exponential map and
//! time interpolation of pose trajectories.
//!
//! Rotations are stored as 3x3 matrices. Quaternions only appear at the file
//! boundary (`from_quaternion` / `to_quaternion`).

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Orthonormality drift above which `compose` re-projects onto SO(3).
const ORTHO_DRIFT: f64 = 1e-9;
/// Below this angle the exponential map uses its series expansion.
const SMALL_ANGLE: f64 = 1e-8;
/// `log` refuses rotations this close to pi.
const NEAR_PI: f64 = 1e-6;
/// |pitch| within this distance of pi/2 is reported as gimbal lock.
const GIMBAL_EPS: f64 = 1e-6;

pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// A proper rigid transform `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform, projecting `rotation` onto SO(3) if it has drifted.
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        let rotation = if orthonormality_error(&rotation) > ORTHO_DRIFT {
            orthonormalize(&rotation)
        } else {
            rotation
        };
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    pub fn from_rotation(rotation: Mat3) -> Self {
        Self::new(rotation, Vec3::zeros())
    }

    pub fn from_euler_zyx(angles: EulerZYX, translation: Vec3) -> Self {
        Self::new(angles.to_rotation(), translation)
    }

    /// Quaternion in scalar-last order. The quaternion is normalized here.
    pub fn from_quaternion(q: [f64; 4], translation: Vec3) -> Self {
        let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[3], q[0], q[1], q[2]));
        Self::new(uq.to_rotation_matrix().into_inner(), translation)
    }

    /// Quaternion `[x, y, z, w]` with `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let r = nalgebra::Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&r);
        let (x, y, z, w) = (q.i, q.j, q.k, q.w);
        if w < 0.0 {
            [-x, -y, -z, -w]
        } else {
            [x, y, z, w]
        }
    }

    /// Row-major 4x4 homogeneous matrix.
    pub fn from_row_major(m: &[f64; 16]) -> Self {
        let rotation = Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::new(rotation, Vec3::new(m[3], m[7], m[11]))
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
            0.0,
            0.0,
            0.0,
            1.0,
        ]
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        Matrix4::from_row_slice(&self.to_row_major())
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn with_translation(&self, translation: Vec3) -> Self {
        Self {
            rotation: self.rotation,
            translation,
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn euler_zyx(&self) -> EulerZYX {
        EulerZYX::from_rotation(&self.rotation).0
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        so3_angle(&self.rotation)
    }

    /// True when the rotation is orthonormal with determinant +1 within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        orthonormality_error(&self.rotation) <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// Largest absolute entry difference of rotation and translation.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let dr = (self.rotation - other.rotation).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl Mul<&RigidTransform> for &RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).abs().max()
}

/// Closest rotation in the Frobenius sense (polar decomposition).
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Roll/pitch/yaw with `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerZYX {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerZYX {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn from_degrees(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::new(roll.to_radians(), pitch.to_radians(), yaw.to_radians())
    }

    pub fn to_degrees(&self) -> [f64; 3] {
        [
            self.roll.to_degrees(),
            self.pitch.to_degrees(),
            self.yaw.to_degrees(),
        ]
    }

    pub fn to_rotation(&self) -> Mat3 {
        let (sr, cr) = self.roll.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
        let ry = Mat3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
        let rz = Mat3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
        rz * ry * rx
    }

    /// Decomposes a rotation. The flag is set at gimbal lock, where roll is
    /// fixed to zero and yaw carries the free angle.
    pub fn from_rotation(r: &Mat3) -> (EulerZYX, bool) {
        let cp = r[(0, 0)].hypot(r[(1, 0)]);
        let pitch = (-r[(2, 0)]).atan2(cp);
        if cp < GIMBAL_EPS.sin() {
            let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
            return (EulerZYX::new(0.0, pitch, yaw), true);
        }
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        (EulerZYX::new(roll, pitch, yaw), false)
    }
}

/// Element of se(3): axis-angle rotation and translation parts.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct TangentVector {
    pub rotation: Vec3,
    pub translation: Vec3,
}

impl TangentVector {
    pub fn new(rotation: Vec3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Layout `[wx, wy, wz, tx, ty, tz]`.
    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn norm(&self) -> f64 {
        (self.rotation.norm_squared() + self.translation.norm_squared()).sqrt()
    }
}

pub fn so3_exp(w: &Vec3) -> Mat3 {
    let theta = w.norm();
    let k = hat(w);
    if theta < SMALL_ANGLE {
        return Mat3::identity() + k + 0.5 * k * k;
    }
    let half = 0.5 * theta;
    let a = theta.sin() / theta;
    let b = 2.0 * (half.sin() / theta).powi(2);
    Mat3::identity() + a * k + b * k * k
}

fn so3_angle(r: &Mat3) -> f64 {
    let v = 0.5 * vee(&(r - r.transpose()));
    let c = 0.5 * (r.trace() - 1.0);
    v.norm().atan2(c)
}

/// Rotation logarithm valid on all of SO(3); near pi the axis comes from the
/// symmetric part.
pub fn so3_log(r: &Mat3) -> Vec3 {
    let v = 0.5 * vee(&(r - r.transpose()));
    let s = v.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let theta = s.atan2(c);
    if theta < SMALL_ANGLE {
        return v;
    }
    if theta < std::f64::consts::PI - 1e-3 {
        return v * (theta / s);
    }
    // Near pi the skew part vanishes. The symmetric part is exactly
    // cos(theta) I + (1 - cos(theta)) u u^T; take its best-conditioned column.
    let b = (0.5 * (r + r.transpose()) - c * Mat3::identity()) / (1.0 - c);
    let mut col = 0;
    for i in 1..3 {
        if b[(i, i)] > b[(col, col)] {
            col = i;
        }
    }
    let mut axis: Vec3 = b.column(col).into_owned();
    axis /= axis.norm();
    if axis.dot(&v) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

fn left_jacobian(w: &Vec3) -> Mat3 {
    let theta = w.norm();
    let k = hat(w);
    if theta < SMALL_ANGLE {
        return Mat3::identity() + 0.5 * k + k * k / 6.0;
    }
    let t2 = theta * theta;
    let half = 0.5 * theta;
    let a = 2.0 * half.sin().powi(2) / t2;
    let b = (theta - theta.sin()) / (t2 * theta);
    Mat3::identity() + a * k + b * k * k
}

fn left_jacobian_inverse(w: &Vec3) -> Mat3 {
    let theta = w.norm();
    let k = hat(w);
    if theta < SMALL_ANGLE {
        return Mat3::identity() - 0.5 * k + k * k / 12.0;
    }
    let half = 0.5 * theta;
    let coeff = (1.0 - half * half.cos() / half.sin()) / (theta * theta);
    Mat3::identity() - 0.5 * k + coeff * k * k
}

pub fn exp(v: &TangentVector) -> RigidTransform {
    RigidTransform::new(
        so3_exp(&v.rotation),
        left_jacobian(&v.rotation) * v.translation,
    )
}

pub fn log(t: &RigidTransform) -> Result<TangentVector> {
    let angle = t.rotation_angle();
    if angle >= std::f64::consts::PI - NEAR_PI {
        return Err(Error::NearPiRotation { angle });
    }
    let w = so3_log(&t.rotation);
    Ok(TangentVector::new(w, left_jacobian_inverse(&w) * t.translation))
}

/// Applies a perturbation expressed in the target (body) frame:
/// rotation about the body axes, translation added in the body frame.
pub fn perturb_left(delta: &TangentVector, t: &RigidTransform) -> RigidTransform {
    exp(delta).compose(t)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySample {
    pub timestamp: f64,
    pub pose: RigidTransform,
}

/// Time-ordered sensor-in-world poses with strictly increasing timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self> {
        for (row, w) in samples.windows(2).enumerate() {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(Error::NonMonotonicTimestamps {
                    row: row + 1,
                    prev: w[0].timestamp,
                    next: w[1].timestamp,
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(first, last)` timestamps; `None` for an empty trajectory.
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.timestamp, self.samples.last()?.timestamp))
    }

    pub fn contains(&self, t: f64) -> bool {
        self.span().is_some_and(|(a, b)| t >= a && t <= b)
    }

    /// Pose at `query`: linear in translation, geodesic in rotation between
    /// the bracketing samples. Exact sample times return the stored pose.
    pub fn interpolate(&self, query: f64) -> Result<RigidTransform> {
        let (start, end) = self.span().unwrap_or((f64::NAN, f64::NAN));
        if self.samples.len() < 2 || !(query >= start && query <= end) {
            return Err(Error::OutOfRange { query, start, end });
        }
        let hi = self.samples.partition_point(|s| s.timestamp < query);
        let upper = &self.samples[hi];
        if upper.timestamp == query {
            return Ok(upper.pose);
        }
        let lower = &self.samples[hi - 1];
        let alpha = (query - lower.timestamp) / (upper.timestamp - lower.timestamp);
        Ok(interpolate_between(&lower.pose, &upper.pose, alpha))
    }

    /// Returns a copy with every pose replaced by `f(pose)`.
    pub fn map_poses(&self, f: impl Fn(&RigidTransform) -> RigidTransform) -> Trajectory {
        Trajectory {
            samples: self
                .samples
                .iter()
                .map(|s| TrajectorySample {
                    timestamp: s.timestamp,
                    pose: f(&s.pose),
                })
                .collect(),
        }
    }
}

pub fn interpolate_between(a: &RigidTransform, b: &RigidTransform, alpha: f64) -> RigidTransform {
    let rel = a.rotation.transpose() * b.rotation;
    let w = so3_log(&rel);
    let rotation = a.rotation * so3_exp(&(w * alpha));
    let translation = a.translation + (b.translation - a.translation) * alpha;
    RigidTransform::new(rotation, translation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            -PI..PI,
            -1.5f64..1.5,
            -PI..PI,
            prop::array::uniform3(-50.0f64..50.0),
        )
            .prop_map(|(r, p, y, t)| {
                RigidTransform::from_euler_zyx(EulerZYX::new(r, p, y), Vec3::from(t))
            })
    }

    #[test]
    fn compose_with_identity() {
        let t = RigidTransform::from_euler_zyx(EulerZYX::new(0.1, -0.2, 0.3), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(RigidTransform::identity().compose(&t), t);
    }

    #[test]
    fn compose_yaw_then_translate() {
        let a = RigidTransform::from_euler_zyx(EulerZYX::new(0.0, 0.0, FRAC_PI_2), Vec3::new(1.0, 0.0, 0.0));
        let b = RigidTransform::from_translation(Vec3::new(1.0, 0.0, 0.0));
        let c = a.compose(&b);
        assert_abs_diff_eq!(c.translation(), &Vec3::new(1.0, 1.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(c.euler_zyx().yaw, FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn invert_translation() {
        let t = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 2.0));
        assert_eq!(t.inverse().translation(), &Vec3::new(0.0, 0.0, -2.0));
        assert_eq!(RigidTransform::identity().inverse(), RigidTransform::identity());
    }

    #[test]
    fn euler_identity_and_axis_permutation() {
        assert_abs_diff_eq!(EulerZYX::default().to_rotation(), Mat3::identity());
        let r = EulerZYX::new(0.0, 0.0, FRAC_PI_2).to_rotation();
        assert_abs_diff_eq!(r * Vec3::x(), Vec3::y(), epsilon = 1e-15);
    }

    #[test]
    fn euler_round_trip_fixed() {
        let e = EulerZYX::new(0.1, 0.2, 0.3);
        let (back, lock) = EulerZYX::from_rotation(&e.to_rotation());
        assert!(!lock);
        assert_abs_diff_eq!(back.roll, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(back.pitch, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(back.yaw, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn gimbal_lock_sets_roll_to_zero() {
        let e = EulerZYX::new(0.4, FRAC_PI_2, 0.9);
        let (back, lock) = EulerZYX::from_rotation(&e.to_rotation());
        assert!(lock);
        assert_eq!(back.roll, 0.0);
        // The decomposition must still reproduce the rotation.
        assert_abs_diff_eq!(back.to_rotation(), e.to_rotation(), epsilon = 1e-9);
    }

    #[test]
    fn exp_of_zero_and_tiny_angles() {
        assert_eq!(exp(&TangentVector::default()), RigidTransform::identity());
        let t = exp(&TangentVector::new(Vec3::new(0.0, 0.0, 1e-12), Vec3::zeros()));
        assert!(t.rotation().iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(t.rotation(), &Mat3::identity(), epsilon = 1e-11);
        let back = log(&t).unwrap();
        assert_abs_diff_eq!(back.rotation.z, 1e-12, epsilon = 1e-20);
    }

    #[test]
    fn log_rejects_near_pi() {
        let t = RigidTransform::from_rotation(so3_exp(&Vec3::new(0.0, 0.0, PI - 1e-8)));
        assert!(matches!(log(&t), Err(Error::NearPiRotation { .. })));
    }

    #[test]
    fn log_round_trip_just_below_pi() {
        let axis = Vec3::new(0.3, -0.5, 0.8).normalize();
        for gap in [1e-3, 1e-4, 1e-5, 2e-6] {
            let w = axis * (PI - gap);
            let back = so3_log(&so3_exp(&w));
            assert!((back - w).abs().max() < 1e-9, "gap {gap}: {}", (back - w).abs().max());
        }
    }

    #[test]
    fn interpolation_cases() {
        let traj = Trajectory::new(vec![
            TrajectorySample { timestamp: 0.0, pose: RigidTransform::identity() },
            TrajectorySample {
                timestamp: 1.0,
                pose: RigidTransform::from_euler_zyx(EulerZYX::new(0.0, 0.0, FRAC_PI_2), Vec3::new(2.0, 0.0, 0.0)),
            },
        ])
        .unwrap();
        let mid = traj.interpolate(0.5).unwrap();
        assert_abs_diff_eq!(mid.translation(), &Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        // Geodesic midpoint: half the axis-angle.
        assert_abs_diff_eq!(mid.euler_zyx().yaw, PI / 4.0, epsilon = 1e-12);
        assert_eq!(traj.interpolate(1.0).unwrap(), traj.samples()[1].pose);
        assert_eq!(traj.interpolate(0.0).unwrap(), traj.samples()[0].pose);
        assert!(matches!(traj.interpolate(1.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(traj.interpolate(-0.1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn trajectory_rejects_equal_timestamps() {
        let s = TrajectorySample { timestamp: 1.0, pose: RigidTransform::identity() };
        assert!(matches!(
            Trajectory::new(vec![s, s]),
            Err(Error::NonMonotonicTimestamps { .. })
        ));
    }

    #[test]
    fn interpolation_is_continuous_at_samples() {
        let traj = Trajectory::new(vec![
            TrajectorySample { timestamp: 0.0, pose: RigidTransform::identity() },
            TrajectorySample {
                timestamp: 1.0,
                pose: RigidTransform::from_euler_zyx(EulerZYX::new(0.3, 0.1, 1.0), Vec3::new(2.0, 1.0, 0.0)),
            },
            TrajectorySample {
                timestamp: 2.0,
                pose: RigidTransform::from_euler_zyx(EulerZYX::new(-0.2, 0.0, 2.0), Vec3::new(3.0, 3.0, 1.0)),
            },
        ])
        .unwrap();
        let at = traj.interpolate(1.0).unwrap();
        for q in [1.0 - 1e-9, 1.0 + 1e-9] {
            assert!(traj.interpolate(q).unwrap().max_abs_diff(&at) < 1e-6);
        }
    }

    #[test]
    fn quaternion_round_trip() {
        let t = RigidTransform::from_euler_zyx(EulerZYX::new(0.3, -0.7, 2.9), Vec3::new(1.0, 2.0, 3.0));
        let q = t.to_quaternion();
        let back = RigidTransform::from_quaternion(q, *t.translation());
        assert!(back.max_abs_diff(&t) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn inverse_composes_to_identity(t in arb_transform()) {
            let id = t.compose(&t.inverse());
            prop_assert!(id.max_abs_diff(&RigidTransform::identity()) < 1e-9);
            let id = t.inverse().compose(&t);
            prop_assert!(id.max_abs_diff(&RigidTransform::identity()) < 1e-9);
        }

        #[test]
        fn compose_is_associative(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!(l.max_abs_diff(&r) < 1e-9);
            prop_assert!(l.is_valid(1e-9));
        }

        #[test]
        fn exp_log_round_trip(w in prop::array::uniform3(-1.7f64..1.7), t in prop::array::uniform3(-10.0f64..10.0)) {
            let v = TangentVector::new(Vec3::from(w), Vec3::from(t));
            prop_assume!(v.rotation.norm() < 3.0);
            let back = log(&exp(&v)).unwrap();
            prop_assert!((back.rotation - v.rotation).abs().max() < 1e-9);
            prop_assert!((back.translation - v.translation).abs().max() < 1e-9);
        }
    }
}
