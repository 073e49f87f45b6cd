//! Pinhole projection, feature sampling and plane-induced view warping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};
use crate::pose::Pose;
use crate::raster::Raster;

/// Points closer than this to the camera plane do not project.
pub const EPS_DEPTH: f64 = 1e-6;

/// Pinhole intrinsics. Integer pixel coordinates address pixel centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        if self.cx < 0.0 || self.cx >= self.width as f64 || self.cy < 0.0 || self.cy >= self.height as f64 {
            return Err(Error::Config("principal point outside image".into()));
        }
        Ok(())
    }

    /// Ray direction through pixel `(u, v)`, with unit depth component.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }

    pub fn matrix(&self) -> Mat3 {
        [
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ]
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        [
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ]
    }
}

/// Outcome of projecting a camera-frame point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel([f64; 2]),
    /// Point at or behind the camera plane (`z <= EPS_DEPTH`).
    Behind,
}

impl Projection {
    pub fn pixel(&self) -> Option<[f64; 2]> {
        match self {
            Projection::Pixel(p) => Some(*p),
            Projection::Behind => None,
        }
    }
}

/// Project a camera-frame point through the pinhole model.
pub fn project(k: &Intrinsics, x: Vec3) -> Projection {
    if x[2] <= EPS_DEPTH {
        return Projection::Behind;
    }
    Projection::Pixel([
        k.fx * x[0] / x[2] + k.cx,
        k.fy * x[1] / x[2] + k.cy,
    ])
}

/// Bilinear feature sample; `None` when `uv` exits `[0,w-1] x [0,h-1]`.
/// "Outside" is a value, not a failure.
pub fn sample_bilinear(map: &Raster, uv: [f64; 2]) -> Option<Vec<f32>> {
    let mut out = vec![0.0f32; map.channels];
    if map.sample_bilinear(uv[0], uv[1], &mut out) {
        Some(out)
    } else {
        None
    }
}

/// Homography (as a 3x3 pixel-to-pixel map, dst -> src) induced by the
/// fronto-parallel plane at `plane_depth` in the destination camera.
fn plane_homography(
    src_pose: &Pose,
    dst_pose: &Pose,
    k: &Intrinsics,
    plane_depth: f64,
) -> Result<Mat3> {
    if plane_depth <= 0.0 {
        return Err(Error::Config("plane depth must be positive".into()));
    }
    // dst camera -> src camera as a similarity: x_src = s*A x_dst + b
    let rel = src_pose.compose(&dst_pose.inverse());
    let a = rel.q.to_matrix();
    let sa = [
        [a[0][0] * rel.s, a[0][1] * rel.s, a[0][2] * rel.s],
        [a[1][0] * rel.s, a[1][1] * rel.s, a[1][2] * rel.s],
        [a[2][0] * rel.s, a[2][1] * rel.s, a[2][2] * rel.s],
    ];
    // points on the plane have x_dst = plane_depth * Kinv * p, so the pixel
    // map is H = K (s*A + b*e3^T / plane_depth) Kinv up to projective scale
    let mut m = sa;
    for i in 0..3 {
        m[i][2] += rel.t[i] / plane_depth;
    }
    let h = math::mat_mul(&k.matrix(), &math::mat_mul(&m, &k.inverse_matrix()));
    let h_inv = math::mat_inverse(&h).ok_or(Error::DegenerateWarp { cond: f64::INFINITY })?;
    let cond = math::frobenius(&h) * math::frobenius(&h_inv);
    if !cond.is_finite() || cond > 1e12 {
        return Err(Error::DegenerateWarp { cond });
    }
    Ok(h)
}

/// Warp `src` (taken at `src_pose`) into the `dst_pose` camera via the
/// homography induced by the fronto-parallel plane at `plane_depth` through
/// the object center. Out-of-bounds samples are zero-filled.
pub fn warp_view(
    src: &Raster,
    src_pose: &Pose,
    dst_pose: &Pose,
    k: &Intrinsics,
    plane_depth: f64,
) -> Result<Raster> {
    let h = plane_homography(src_pose, dst_pose, k, plane_depth)?;
    let mut out = Raster::zeros(src.width, src.height, src.channels);
    let mut buf = vec![0.0f32; src.channels];
    for y in 0..out.height {
        for x in 0..out.width {
            let p = math::mat_vec(&h, [x as f64, y as f64, 1.0]);
            if p[2].abs() < EPS_DEPTH {
                continue;
            }
            let u = p[0] / p[2];
            let v = p[1] / p[2];
            if src.sample_bilinear(u, v, &mut buf) {
                out.pixel_mut(x, y).copy_from_slice(&buf);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Quaternion;

    fn test_k() -> Intrinsics {
        Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 64.0,
            cy: 64.0,
            width: 128,
            height: 128,
        }
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        assert_eq!(
            project(&test_k(), [0.0, 0.0, 1.0]),
            Projection::Pixel([64.0, 64.0])
        );
    }

    #[test]
    fn pinhole_formula() {
        assert_eq!(
            project(&test_k(), [0.5, 0.0, 1.0]),
            Projection::Pixel([114.0, 64.0])
        );
    }

    #[test]
    fn behind_camera() {
        assert_eq!(project(&test_k(), [0.0, 0.0, -1.0]), Projection::Behind);
    }

    #[test]
    fn project_then_sample_constant_raster() {
        let k = test_k();
        let mut map = Raster::zeros(k.width, k.height, 1);
        map.data.fill(0.625);
        for x in [[0.1, -0.2, 1.0], [0.3, 0.3, 2.0], [-0.4, 0.2, 0.8]] {
            let px = project(&k, x).pixel().unwrap();
            let v = sample_bilinear(&map, px).unwrap();
            assert_eq!(v[0], 0.625);
        }
    }

    fn ramp_image(w: usize, h: usize) -> Raster {
        let mut img = Raster::zeros(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                img.pixel_mut(x, y)[0] = (x + y) as f32 / (w + h - 2) as f32;
            }
        }
        img
    }

    #[test]
    fn identity_warp_is_identity() {
        let k = test_k();
        let pose = Pose::new(Quaternion::IDENTITY, [0.0, 0.0, 2.0], 1.0);
        let img = ramp_image(128, 128);
        let out = warp_view(&img, &pose, &pose, &k, 2.0).unwrap();
        for (a, b) in img.data.iter().zip(&out.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn half_turn_about_optical_axis_rotates_image() {
        let k = test_k();
        let src_pose = Pose::new(Quaternion::IDENTITY, [0.0, 0.0, 2.0], 1.0);
        let q = Quaternion::from_axis_index(2, std::f64::consts::PI);
        let dst_pose = Pose::new(q, [0.0, 0.0, 2.0], 1.0);
        let img = ramp_image(129, 129); // odd size: center pixel = principal point
        let out = warp_view(&img, &src_pose, &dst_pose, &k, 2.0).unwrap();
        let rotated = img.rotate_about_center(180.0);
        let mut max_err = 0.0f32;
        for (a, b) in rotated.data.iter().zip(&out.data) {
            max_err = max_err.max((a - b).abs());
        }
        assert!(max_err < 1e-4, "max_err={max_err}");
    }

    // Warp round-trip residual measured on a 64x64 linear ramp: a warp to a
    // rotated view and back must reproduce the ramp up to resampling. The
    // 0.02 budget (fraction of dynamic range) comes from running this very
    // harness; interior bilinear error on a ramp is near zero, the budget
    // absorbs border effects.
    #[test]
    fn warp_roundtrip_residual_on_ramp() {
        let k = Intrinsics {
            fx: 80.0,
            fy: 80.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
        };
        let a = Pose::new(Quaternion::IDENTITY, [0.0, 0.0, 2.0], 1.0);
        let disturb = Quaternion::from_scaled_axis([0.05, -0.08, 0.3]);
        let b = Pose::new(disturb, [0.05, -0.02, 2.1], 1.0);
        let img = ramp_image(64, 64);
        let there = warp_view(&img, &a, &b, &k, 2.0).unwrap();
        let back = warp_view(&there, &b, &a, &k, 2.0).unwrap();
        let mut err_sum = 0.0f64;
        let mut count = 0usize;
        for y in 0..64 {
            for x in 0..64 {
                // skip pixels the round trip zero-filled at the borders
                if back.pixel(x, y)[0] == 0.0 && img.pixel(x, y)[0] > 0.05 {
                    continue;
                }
                err_sum += (back.pixel(x, y)[0] - img.pixel(x, y)[0]).abs() as f64;
                count += 1;
            }
        }
        let mean = err_sum / count as f64;
        assert!(mean < 0.02, "mean roundtrip error {mean}");
    }

    #[test]
    fn warp_composition_consistency() {
        let k = test_k();
        let pa = Pose::new(Quaternion::IDENTITY, [0.0, 0.0, 2.0], 1.0);
        let pb = Pose::new(Quaternion::from_scaled_axis([0.0, 0.1, 0.1]), [0.02, 0.0, 2.0], 1.0);
        let pc = Pose::new(Quaternion::from_scaled_axis([0.1, 0.0, -0.1]), [0.0, 0.03, 2.1], 1.0);
        let img = ramp_image(128, 128);
        let ab = warp_view(&img, &pa, &pb, &k, 2.0).unwrap();
        let abc = warp_view(&ab, &pb, &pc, &k, 2.0).unwrap();
        let ac = warp_view(&img, &pa, &pc, &k, 2.0).unwrap();
        let mut err_sum = 0.0f64;
        let mut count = 0usize;
        for (a, b) in abc.data.iter().zip(&ac.data) {
            if *a == 0.0 || *b == 0.0 {
                continue;
            }
            err_sum += (a - b).abs() as f64;
            count += 1;
        }
        assert!(err_sum / count as f64 < 0.05);
    }

    #[test]
    fn degenerate_plane_rejected() {
        let k = test_k();
        let pose = Pose::new(Quaternion::IDENTITY, [0.0, 0.0, 2.0], 1.0);
        assert!(matches!(
            warp_view(&Raster::zeros(8, 8, 1), &pose, &pose, &k, 0.0),
            Err(_)
        ));
    }
}
