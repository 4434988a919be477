//! Rigid-body poses: unit quaternions stored `(w, x, y, z)`, translations in
//! meters, and the distance/decomposition helpers used by the tracker
//! thresholds and the scenario metrics.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;

/// Unit quaternion `(w, x, y, z)`. Every constructor normalizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl From<Quat> for [f64; 4] {
    fn from(q: Quat) -> Self {
        q.to_array()
    }
}

impl From<[f64; 4]> for Quat {
    fn from(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }
}

impl Default for Quat {
    fn default() -> Self {
        Quat::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Builds a quaternion from raw components and normalizes it. A zero or
    /// non-finite input collapses to identity.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-300 {
            return Quat::IDENTITY;
        }
        Quat { w: w / n, x: x / n, y: y / n, z: z / n }
    }

    /// Wraps components that are already unit-norm without renormalizing, so
    /// values read off the wire keep their exact bits.
    pub(crate) fn from_unit_unchecked(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n < 1e-300 {
            return Quat::IDENTITY;
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Exponential map: rotation vector `θ·a` to quaternion.
    pub fn from_rotation_vector(v: &Vec3) -> Self {
        let angle = v.norm();
        if angle < 1e-12 {
            // second-order expansion keeps tiny rotations accurate
            return Quat::new(1.0 - angle * angle / 8.0, 0.5 * v.x, 0.5 * v.y, 0.5 * v.z);
        }
        Quat::from_axis_angle(v, angle)
    }

    /// Logarithm map: returns `θ·a` with `θ ∈ [0, π]`.
    pub fn to_rotation_vector(&self) -> Vec3 {
        // pick the hemisphere with w >= 0 so θ <= π
        let (w, v) = if self.w < 0.0 { (-self.w, -self.vector()) } else { (self.w, self.vector()) };
        let s = v.norm();
        if s < 1e-300 {
            return Vec3::zeros();
        }
        let angle = 2.0 * s.atan2(w);
        v * (angle / s)
    }

    pub fn conjugate(&self) -> Self {
        Quat { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn inverse(&self) -> Self {
        self.conjugate()
    }

    pub fn negated(&self) -> Self {
        Quat { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    /// Hamilton product `self ⊗ other`, renormalized.
    pub fn multiply(&self, o: &Quat) -> Self {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    pub fn dot(&self, o: &Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        let u = self.vector();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
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

    /// Quaternion of a rotation matrix (re-orthonormalized first).
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let r = nalgebra::Rotation3::from_matrix(m);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&r);
        Quat::new(q.w, q.i, q.j, q.k)
    }

    /// Shortest-arc spherical interpolation.
    pub fn slerp(&self, other: &Quat, t: f64) -> Quat {
        let mut b = *other;
        let mut d = self.dot(&b);
        if d < 0.0 {
            b = b.negated();
            d = -d;
        }
        if d > 1.0 - 1e-12 {
            return Quat::new(
                self.w + t * (b.w - self.w),
                self.x + t * (b.x - self.x),
                self.y + t * (b.y - self.y),
                self.z + t * (b.z - self.z),
            );
        }
        let theta = d.clamp(-1.0, 1.0).acos();
        let s = theta.sin();
        let ka = ((1.0 - t) * theta).sin() / s;
        let kb = (t * theta).sin() / s;
        Quat::new(ka * self.w + kb * b.w, ka * self.x + kb * b.x, ka * self.y + kb * b.y, ka * self.z + kb * b.z)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Geodesic rotation distance in degrees, `2·acos(|⟨q1,q2⟩|)`. `q` and `-q`
/// are the same rotation.
pub fn geodesic_deg(q1: &Quat, q2: &Quat) -> f64 {
    let d = q1.dot(q2).abs().clamp(-1.0, 1.0);
    (2.0 * d.acos()).to_degrees()
}

/// Rotation taking `reference` to `q`, as a rotation vector expressed in the
/// reference body frame. Its norm is the geodesic angle in radians.
pub fn rotation_vector_in_frame(reference: &Quat, q: &Quat) -> Vec3 {
    reference.inverse().multiply(q).to_rotation_vector()
}

/// Position plus orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::IDENTITY
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose { position: Vector3::new(0.0, 0.0, 0.0), orientation: Quat::IDENTITY };

    pub fn new(position: Vec3, orientation: Quat) -> Self {
        Pose { position, orientation }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose::new(Vec3::new(x, y, z), Quat::IDENTITY)
    }

    pub fn from_rotation(q: Quat) -> Self {
        Pose::new(Vec3::zeros(), q)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.position + self.orientation.rotate(&other.position),
            orientation: self.orientation.multiply(&other.orientation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let qi = self.orientation.inverse();
        Pose { position: -qi.rotate(&self.position), orientation: qi }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.position + self.orientation.rotate(p)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite()) && self.orientation.to_array().iter().all(|v| v.is_finite())
    }
}

/// Free-function form of [`Pose::compose`].
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

/// Change between two consecutive poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseDelta {
    /// Euclidean translation change, meters.
    pub d_pos: f64,
    /// Geodesic rotation change, degrees in `[0, 180]`.
    pub d_rot: f64,
}

pub fn pose_delta(prev: &Pose, cur: &Pose) -> PoseDelta {
    PoseDelta { d_pos: (cur.position - prev.position).norm(), d_rot: geodesic_deg(&prev.orientation, &cur.orientation) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn pose_close(a: &Pose, b: &Pose, tol: f64) -> bool {
        (a.position - b.position).norm() < tol && geodesic_deg(&a.orientation, &b.orientation) < tol.to_degrees().max(tol)
    }

    #[test]
    fn compose_identity_and_inverse() {
        let p = Pose::new(Vec3::new(0.3, -0.2, 1.1), Quat::from_axis_angle(&Vec3::new(1.0, 2.0, 0.5), 0.7));
        assert!(pose_close(&compose(&Pose::IDENTITY, &p), &p, 1e-12));
        let id = compose(&p, &p.inverse());
        assert!(id.position.norm() < 1e-9);
        assert!(geodesic_deg(&id.orientation, &Quat::IDENTITY) < 1e-6);
    }

    #[test]
    fn pure_translations_add() {
        let c = compose(&Pose::from_translation(1.0, 0.0, 0.0), &Pose::from_translation(0.0, 2.0, 0.0));
        assert_eq!(c.position, Vec3::new(1.0, 2.0, 0.0));
    }

    #[test]
    fn geodesic_examples() {
        let q = Quat::from_axis_angle(&Vec3::new(0.0, 1.0, 1.0), 1.2);
        assert_eq!(geodesic_deg(&q, &q), 0.0);
        let flip = Quat::from_axis_angle(&Vec3::x(), PI);
        assert!((geodesic_deg(&Quat::IDENTITY, &flip) - 180.0).abs() < 1e-9);
        assert!(geodesic_deg(&q, &q.negated()) < 1e-9);
    }

    #[test]
    fn pose_delta_examples() {
        let a = Pose::from_translation(0.1, 0.2, 0.7);
        let d = pose_delta(&a, &a);
        assert_eq!((d.d_pos, d.d_rot), (0.0, 0.0));

        let b = Pose::from_translation(0.1 + 0.16, 0.2, 0.7);
        let d = pose_delta(&a, &b);
        assert!((d.d_pos - 0.16).abs() < 1e-12 && d.d_rot == 0.0);

        // 95° about z: q = (cos 47.5°, 0, 0, sin 47.5°); |<id, q>| = cos 47.5°,
        // so 2·acos gives 95° back.
        let half = 47.5_f64.to_radians();
        let rotated = Pose::new(a.position, Quat::new(half.cos(), 0.0, 0.0, half.sin()));
        let d = pose_delta(&a, &rotated);
        assert!(d.d_pos == 0.0);
        assert!((d.d_rot - 95.0).abs() < 1e-9, "{}", d.d_rot);
    }

    #[test]
    fn rotation_vector_examples() {
        let q = Quat::from_axis_angle(&Vec3::new(0.3, 0.1, -0.4), 0.9);
        assert_eq!(rotation_vector_in_frame(&q, &q), Vec3::zeros());
        let qy = Quat::from_axis_angle(&Vec3::y(), FRAC_PI_2);
        let r = rotation_vector_in_frame(&Quat::IDENTITY, &qy);
        assert!((r - Vec3::new(0.0, FRAC_PI_2, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rotation_vector_is_body_frame() {
        // reference maps body y to world z; a body-y rotation must come back on y
        let reference = Quat::from_axis_angle(&Vec3::x(), FRAC_PI_2);
        let q = reference.multiply(&Quat::from_axis_angle(&Vec3::y(), 0.3));
        let r = rotation_vector_in_frame(&reference, &q);
        assert!((r - Vec3::new(0.0, 0.3, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn slerp_endpoints_and_short_arc() {
        let a = Quat::from_axis_angle(&Vec3::z(), 0.2);
        let b = Quat::from_axis_angle(&Vec3::z(), 1.4).negated();
        assert!(geodesic_deg(&a.slerp(&b, 0.0), &a) < 1e-9);
        assert!(geodesic_deg(&a.slerp(&b, 1.0), &b) < 1e-6);
        let mid = a.slerp(&b, 0.5);
        assert!((geodesic_deg(&mid, &Quat::from_axis_angle(&Vec3::z(), 0.8))).abs() < 1e-6);
    }

    #[test]
    fn matrix_matches_rotate() {
        let q = Quat::from_axis_angle(&Vec3::new(1.0, -2.0, 0.5), 2.1);
        let v = Vec3::new(0.4, 0.5, -0.6);
        assert!((q.to_matrix() * v - q.rotate(&v)).norm() < 1e-12);
        assert!(geodesic_deg(&Quat::from_matrix(&q.to_matrix()), &q) < 1e-6);
    }

    fn arb_quat() -> impl Strategy<Value = Quat> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| Quat::new(w, x, y, z))
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (arb_quat(), -2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(q, x, y, z)| Pose::new(Vec3::new(x, y, z), q))
    }

    proptest! {
        #[test]
        fn constructors_normalize(q in arb_quat(), b in arb_quat()) {
            prop_assert!((q.norm() - 1.0).abs() < 1e-9);
            prop_assert!((q.multiply(&b).norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn composition_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!((l.position - r.position).norm() < 1e-9);
            prop_assert!(l.orientation.dot(&r.orientation).abs() > 1.0 - 1e-9);
        }

        #[test]
        fn geodesic_triangle_inequality(a in arb_quat(), b in arb_quat(), c in arb_quat()) {
            let ab = geodesic_deg(&a, &b);
            let bc = geodesic_deg(&b, &c);
            let ac = geodesic_deg(&a, &c);
            prop_assert!(ac <= ab + bc + 1e-6);
            prop_assert!((geodesic_deg(&b, &a) - ab).abs() < 1e-12);
        }

        #[test]
        fn geodesic_matches_rotation_vector_norm(q in arb_quat()) {
            let g = geodesic_deg(&Quat::IDENTITY, &q);
            let r = rotation_vector_in_frame(&Quat::IDENTITY, &q).norm().to_degrees();
            // acos loses precision near 0°; compare on the well-conditioned range
            let tol = if g > 1e-2 { 1e-9 } else { 1e-6 };
            prop_assert!((g - r).abs() < tol, "{} vs {}", g, r);
        }

        #[test]
        fn exp_log_round_trip(reference in arb_quat(), q in arb_quat()) {
            let r = rotation_vector_in_frame(&reference, &q);
            let back = reference.multiply(&Quat::from_rotation_vector(&r));
            prop_assert!(back.dot(&q).abs() > 1.0 - 1e-9);
            let diff = [back.w - q.w, back.x - q.x, back.y - q.y, back.z - q.z];
            let diff_neg = [back.w + q.w, back.x + q.x, back.y + q.y, back.z + q.z];
            let e = diff.iter().map(|d| d.abs()).fold(0.0, f64::max)
                .min(diff_neg.iter().map(|d| d.abs()).fold(0.0, f64::max));
            prop_assert!(e < 1e-9);
        }
    }
}
