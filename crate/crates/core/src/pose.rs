//! Pose representation and algebra.
//!
//! A pose `p = (q, t, s)` maps object coordinates into the camera frame:
//! `x_cam = s * R(q) * x_obj + t`. Object coordinates are normalized so the
//! model fits the unit cube centered at the origin; translations are
//! therefore in object-cube units. Residuals express a pose update as three
//! axis-angle rotation components (camera frame), three translation offsets
//! in object-diameter units, and one log-scale offset.
//!
//! All types are immutable value objects and every operation is pure.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::math::{self, Vec3};

/// Unit quaternion in `[w, x, y, z]` order with canonical sign `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalize to unit length and canonical sign (`w >= 0`).
    /// `q` and `-q` denote the same rotation; canonicalization makes
    /// equality testing and binning unambiguous.
    pub fn normalized(w: f64, x: f64, y: f64, z: f64) -> Result<Quaternion> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidQuaternion);
        }
        let sign = if w < 0.0 { -1.0 } else { 1.0 };
        let k = sign / n;
        Ok(Quaternion {
            w: w * k,
            x: x * k,
            y: y * k,
            z: z * k,
        })
    }

    /// Hamilton product `self * other` (apply `other` first), renormalized.
    pub fn mul(&self, o: &Quaternion) -> Quaternion {
        let w = self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z;
        let x = self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y;
        let y = self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x;
        let z = self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w;
        // product of unit quaternions stays unit up to rounding
        Quaternion::normalized(w, x, y, z).expect("unit quaternion product")
    }

    pub fn conjugate(&self) -> Quaternion {
        Quaternion::normalized(self.w, -self.x, -self.y, -self.z).expect("unit conjugate")
    }

    /// Rotate a vector: `v' = v + 2u x (u x v) + 2w (u x v)` with `u = (x,y,z)`.
    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let u = [self.x, self.y, self.z];
        let t = math::scale(math::cross(u, v), 2.0);
        math::add(v, math::add(math::cross(u, t), math::scale(t, self.w)))
    }

    /// Exponential map: rotation vector (axis * angle, radians) to quaternion.
    pub fn from_scaled_axis(rv: Vec3) -> Quaternion {
        let angle = math::norm(rv);
        if angle < 1e-12 {
            // first-order expansion keeps the map smooth through zero
            return Quaternion::normalized(1.0, rv[0] * 0.5, rv[1] * 0.5, rv[2] * 0.5)
                .expect("near-identity");
        }
        let half = angle * 0.5;
        let k = half.sin() / angle;
        Quaternion::normalized(half.cos(), rv[0] * k, rv[1] * k, rv[2] * k).expect("exp map")
    }

    /// Logarithm map: rotation vector of the canonical (shortest) rotation.
    pub fn to_scaled_axis(&self) -> Vec3 {
        // canonical sign guarantees w >= 0, so angle <= pi
        let sin_half = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        if sin_half < 1e-12 {
            return [2.0 * self.x, 2.0 * self.y, 2.0 * self.z];
        }
        let angle = 2.0 * sin_half.atan2(self.w);
        let k = angle / sin_half;
        [self.x * k, self.y * k, self.z * k]
    }

    /// Rotation about a coordinate axis (0=x, 1=y, 2=z) by `angle` radians.
    pub fn from_axis_index(axis: usize, angle: f64) -> Quaternion {
        let mut rv = [0.0; 3];
        rv[axis] = angle;
        Quaternion::from_scaled_axis(rv)
    }

    /// From a rotation matrix (Shepperd's method: pick the largest of the
    /// four squared components for numerical stability).
    pub fn from_matrix(m: &math::Mat3) -> Quaternion {
        let trace = m[0][0] + m[1][1] + m[2][2];
        let (w, x, y, z);
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[2][1] - m[1][2]) / s;
            y = (m[0][2] - m[2][0]) / s;
            z = (m[1][0] - m[0][1]) / s;
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            w = (m[2][1] - m[1][2]) / s;
            x = 0.25 * s;
            y = (m[0][1] + m[1][0]) / s;
            z = (m[0][2] + m[2][0]) / s;
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            w = (m[0][2] - m[2][0]) / s;
            x = (m[0][1] + m[1][0]) / s;
            y = 0.25 * s;
            z = (m[1][2] + m[2][1]) / s;
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            w = (m[1][0] - m[0][1]) / s;
            x = (m[0][2] + m[2][0]) / s;
            y = (m[1][2] + m[2][1]) / s;
            z = 0.25 * s;
        }
        Quaternion::normalized(w, x, y, z).expect("rotation matrix")
    }

    /// 3x3 rotation matrix.
    pub fn to_matrix(&self) -> math::Mat3 {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }
}

/// Geodesic angle between two rotations, in degrees, in `[0, 180]`.
/// Invariant under the `q`/`-q` double cover.
pub fn rotation_angle_deg(a: &Quaternion, b: &Quaternion) -> f64 {
    let d = a.dot(b).abs().clamp(0.0, 1.0);
    (2.0 * d.acos()).to_degrees()
}

/// Similarity transform `x_cam = s * R(q) * x_obj + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub q: Quaternion,
    pub t: Vec3,
    pub s: f64,
}

impl Pose {
    pub fn identity() -> Pose {
        Pose {
            q: Quaternion::IDENTITY,
            t: [0.0; 3],
            s: 1.0,
        }
    }

    pub fn new(q: Quaternion, t: Vec3, s: f64) -> Pose {
        debug_assert!(s > 0.0, "pose scale must be positive");
        Pose { q, t, s }
    }

    /// Composition: the result applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            q: self.q.mul(&other.q),
            t: math::add(math::scale(self.q.rotate(other.t), self.s), self.t),
            s: self.s * other.s,
        }
    }

    pub fn inverse(&self) -> Pose {
        let q_inv = self.q.conjugate();
        let s_inv = 1.0 / self.s;
        Pose {
            q: q_inv,
            t: math::scale(q_inv.rotate(self.t), -s_inv),
            s: s_inv,
        }
    }

    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        math::add(math::scale(self.q.rotate(p), self.s), self.t)
    }

    pub fn transform_points(&self, pts: &[Vec3]) -> Vec<Vec3> {
        pts.iter().map(|p| self.transform_point(*p)).collect()
    }

    /// Camera center in object coordinates (the point mapping to the camera
    /// origin): `-R^T t / s`.
    pub fn camera_center(&self) -> Vec3 {
        math::scale(self.q.conjugate().rotate(self.t), -1.0 / self.s)
    }
}

/// Pose update in the 7-dimensional residual space searched by the refiner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseResidual {
    /// Axis-angle rotation components about the camera x/y/z axes, radians.
    pub rot: Vec3,
    /// Translation offsets in object-diameter units.
    pub trans: Vec3,
    /// Log-scale offset.
    pub log_s: f64,
}

impl PoseResidual {
    pub fn zero() -> PoseResidual {
        PoseResidual {
            rot: [0.0; 3],
            trans: [0.0; 3],
            log_s: 0.0,
        }
    }

    /// Component by dimension index, rotation first: `(rx, ry, rz, tx, ty, tz, log_s)`.
    pub fn component(&self, dim: usize) -> f64 {
        match dim {
            0..=2 => self.rot[dim],
            3..=5 => self.trans[dim - 3],
            6 => self.log_s,
            _ => panic!("residual dimension out of range: {dim}"),
        }
    }

    pub fn set_component(&mut self, dim: usize, value: f64) {
        match dim {
            0..=2 => self.rot[dim] = value,
            3..=5 => self.trans[dim - 3] = value,
            6 => self.log_s = value,
            _ => panic!("residual dimension out of range: {dim}"),
        }
    }
}

/// Frame in which residual rotations are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RotationFrame {
    /// `q' = exp(rot) * q` — perturbation about camera axes.
    #[default]
    Camera,
    /// `q' = q * exp(rot)` — perturbation about object axes.
    Object,
}

/// Apply a residual to a pose. Rotation composes on the camera side (or
/// object side per `frame`), translation offsets are scaled by the object
/// `diameter`, and scale is multiplied by `exp(log_s)`.
pub fn apply_residual_in(
    p: &Pose,
    r: &PoseResidual,
    diameter: f64,
    frame: RotationFrame,
) -> Pose {
    let dq = Quaternion::from_scaled_axis(r.rot);
    let q = match frame {
        RotationFrame::Camera => dq.mul(&p.q),
        RotationFrame::Object => p.q.mul(&dq),
    };
    Pose {
        q,
        t: math::add(p.t, math::scale(r.trans, diameter)),
        s: p.s * r.log_s.exp(),
    }
}

/// Camera-frame convenience wrapper around [`apply_residual_in`].
pub fn apply_residual(p: &Pose, r: &PoseResidual, diameter: f64) -> Pose {
    apply_residual_in(p, r, diameter, RotationFrame::Camera)
}

/// Residual taking `p` to `g` (camera-frame rotation), the inverse of
/// [`apply_residual`]. Exact whenever the rotation gap is below 180 degrees;
/// callers should stay under 90 degrees where bin semantics matter.
pub fn residual_between(p: &Pose, g: &Pose, diameter: f64) -> PoseResidual {
    let dq = g.q.mul(&p.q.conjugate());
    PoseResidual {
        rot: dq.to_scaled_axis(),
        trans: math::scale(math::sub(g.t, p.t), 1.0 / diameter),
        log_s: (g.s / p.s).ln(),
    }
}

// Pose serializes as {"q":[w,x,y,z],"t":[x,y,z],"s":s}.
impl Serialize for Quaternion {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        [self.w, self.x, self.y, self.z].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Quaternion {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let v = <[f64; 4]>::deserialize(deserializer)?;
        Quaternion::normalized(v[0], v[1], v[2], v[3])
            .map_err(|_| D::Error::custom("quaternion has zero norm"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    pub(crate) fn random_quaternion(rng: &mut StdRng) -> Quaternion {
        loop {
            let q = Quaternion::normalized(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if let Ok(q) = q {
                return q;
            }
        }
    }

    pub(crate) fn random_pose(rng: &mut StdRng) -> Pose {
        Pose {
            q: random_quaternion(rng),
            t: [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ],
            s: rng.gen_range(0.3..3.0),
        }
    }

    #[test]
    fn normalize_scales_and_canonicalizes() {
        let q = Quaternion::normalized(2.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(q, Quaternion::IDENTITY);
        let q = Quaternion::normalized(-1.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(q, Quaternion::IDENTITY);
    }

    #[test]
    fn zero_quaternion_rejected() {
        assert!(matches!(
            Quaternion::normalized(0.0, 0.0, 0.0, 0.0),
            Err(Error::InvalidQuaternion)
        ));
    }

    #[test]
    fn compose_identity_law() {
        let mut rng = StdRng::seed_from_u64(7);
        let p = random_pose(&mut rng);
        let c = Pose::identity().compose(&p);
        assert_relative_eq!(c.q.dot(&p.q).abs(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.t[0], p.t[0], epsilon = 1e-12);
        assert_relative_eq!(c.s, p.s, epsilon = 1e-12);
    }

    #[test]
    fn compose_inverse_law() {
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let id = p.compose(&p.inverse());
            assert!(rotation_angle_deg(&id.q, &Quaternion::IDENTITY) < 1e-9);
            assert!(math::norm(id.t) < 1e-9);
            assert!((id.s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn transform_identity_and_translation() {
        let p = Pose::identity();
        assert_eq!(p.transform_point([1.0, 2.0, 3.0]), [1.0, 2.0, 3.0]);
        let p = Pose::new(Quaternion::IDENTITY, [1.0, 0.0, 0.0], 1.0);
        assert_eq!(p.transform_point([0.0, 0.0, 0.0]), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn quarter_turn_about_z() {
        let q = Quaternion::from_axis_index(2, std::f64::consts::FRAC_PI_2);
        let p = Pose::new(q, [0.0; 3], 1.0);
        let out = p.transform_point([1.0, 0.0, 0.0]);
        assert_relative_eq!(out[0], 0.0, epsilon = 1e-9);
        assert_relative_eq!(out[1], 1.0, epsilon = 1e-9);
        assert_relative_eq!(out[2], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn rotation_angle_examples() {
        let id = Quaternion::IDENTITY;
        assert_eq!(rotation_angle_deg(&id, &id), 0.0);
        let half = std::f64::consts::FRAC_PI_4; // 45 deg half-angle = 90 deg rotation
        let q = Quaternion::normalized(half.cos(), half.sin(), 0.0, 0.0).unwrap();
        assert_relative_eq!(rotation_angle_deg(&id, &q), 90.0, epsilon = 1e-9);
        // double cover: -q is the same rotation (normalized() flips the sign back)
        let neg = Quaternion::normalized(-q.w, -q.x, -q.y, -q.z).unwrap();
        assert_relative_eq!(rotation_angle_deg(&q, &neg), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn residual_zero_is_identity_map() {
        let mut rng = StdRng::seed_from_u64(9);
        let p = random_pose(&mut rng);
        let r = PoseResidual::zero();
        let p2 = apply_residual(&p, &r, 1.3);
        assert!(rotation_angle_deg(&p.q, &p2.q) < 1e-12);
        assert_eq!(p.t, p2.t);
        assert_relative_eq!(p.s, p2.s, epsilon = 1e-15);
    }

    #[test]
    fn residual_log_scale_doubles() {
        let p = Pose::identity();
        let r = PoseResidual {
            rot: [0.0; 3],
            trans: [0.0; 3],
            log_s: std::f64::consts::LN_2,
        };
        let p2 = apply_residual(&p, &r, 1.0);
        assert_relative_eq!(p2.s, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn residual_roundtrip_under_90_degrees() {
        let mut rng = StdRng::seed_from_u64(10);
        let diameter = 0.9;
        let mut tested = 0;
        while tested < 300 {
            let p = random_pose(&mut rng);
            let g = random_pose(&mut rng);
            if rotation_angle_deg(&p.q, &g.q) >= 90.0 {
                continue;
            }
            tested += 1;
            let r = residual_between(&p, &g, diameter);
            let back = apply_residual(&p, &r, diameter);
            assert!(rotation_angle_deg(&back.q, &g.q) < 1e-6);
            assert!(math::distance(back.t, g.t) < 1e-6);
            assert!((back.s - g.s).abs() / g.s < 1e-6);
        }
    }

    #[test]
    fn object_frame_residual_roundtrips_via_inverse_map() {
        let mut rng = StdRng::seed_from_u64(11);
        let p = random_pose(&mut rng);
        let r = PoseResidual {
            rot: [0.2, -0.1, 0.3],
            trans: [0.01, 0.02, -0.03],
            log_s: 0.1,
        };
        let g = apply_residual_in(&p, &r, 1.0, RotationFrame::Object);
        // camera- and object-frame updates differ for non-identity q
        let g_cam = apply_residual_in(&p, &r, 1.0, RotationFrame::Camera);
        assert!(rotation_angle_deg(&g.q, &g_cam.q) > 1e-3);
        // object-frame rotation equals conjugated camera-frame rotation
        let dq = Quaternion::from_scaled_axis(r.rot);
        let expect = p.q.mul(&dq);
        assert!(rotation_angle_deg(&g.q, &expect) < 1e-9);
    }

    #[test]
    fn matrix_roundtrip() {
        let mut rng = StdRng::seed_from_u64(12);
        for _ in 0..200 {
            let q = random_quaternion(&mut rng);
            let back = Quaternion::from_matrix(&q.to_matrix());
            assert!(rotation_angle_deg(&q, &back) < 1e-9);
        }
    }

    #[test]
    fn pose_json_shape() {
        let p = Pose::new(
            Quaternion::from_axis_index(2, 0.4),
            [0.1, -0.2, 2.5],
            1.25,
        );
        let js = serde_json::to_value(&p).unwrap();
        assert!(js.get("q").unwrap().as_array().unwrap().len() == 4);
        assert!(js.get("t").unwrap().as_array().unwrap().len() == 3);
        assert!(js.get("s").unwrap().as_f64().unwrap() > 0.0);
        let back: Pose = serde_json::from_value(js).unwrap();
        assert!(rotation_angle_deg(&back.q, &p.q) < 1e-12);
    }
}
