//! Feature volumes in the object cube and the explicit matching cost.
//!
//! A volume is a regular grid over the unit cube, scaled by the object
//! diameter in object space. Support volumes aggregate per-voxel feature
//! mean/variance across views that see the voxel; target volumes hold the
//! features sampled from the target image under a hypothesis pose. The
//! matching cost compares the two over jointly valid voxels.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeaturePyramid;
use crate::initializer::SupportSet;
use crate::math::Vec3;
use crate::pose::Pose;

/// Per-stage volume geometry: grid resolution, feature channels, and the
/// pyramid level (divisor) the features come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeSpec {
    pub resolution: usize,
    pub channels: usize,
    pub divisor: usize,
}

/// Default coarse-to-fine ladder: 16^3 x 64 from div-16 features,
/// 32^3 x 32 from div-8, 64^3 x 16 from div-4.
pub fn default_volume_ladder() -> Vec<VolumeSpec> {
    vec![
        VolumeSpec {
            resolution: 16,
            channels: 64,
            divisor: 16,
        },
        VolumeSpec {
            resolution: 32,
            channels: 32,
            divisor: 8,
        },
        VolumeSpec {
            resolution: 64,
            channels: 16,
            divisor: 4,
        },
    ]
}

/// Voxel grid of feature statistics. Storage is voxel-major, channels-last;
/// voxel `(i, j, k)` lives at index `(k*res + j)*res + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    pub resolution: usize,
    pub channels: usize,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub valid: Vec<bool>,
}

impl FeatureVolume {
    pub fn zeros(spec: &VolumeSpec) -> FeatureVolume {
        let n = spec.resolution.pow(3);
        FeatureVolume {
            resolution: spec.resolution,
            channels: spec.channels,
            mean: vec![0.0; n * spec.channels],
            var: vec![0.0; n * spec.channels],
            valid: vec![false; n],
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Center of voxel `(i, j, k)` in the unit cube: `((i+0.5)/res - 0.5, ...)`.
pub fn voxel_center(i: usize, j: usize, k: usize, res: usize) -> Vec3 {
    [
        (i as f64 + 0.5) / res as f64 - 0.5,
        (j as f64 + 0.5) / res as f64 - 0.5,
        (k as f64 + 0.5) / res as f64 - 0.5,
    ]
}

/// Fast bilinear sampler over one pyramid level, addressed in full-res
/// pixel coordinates.
struct LevelSampler<'a> {
    data: &'a [f32],
    w: usize,
    h: usize,
    c: usize,
    inv_div: f64,
    half_off: f64,
}

impl<'a> LevelSampler<'a> {
    fn new(pyr: &'a FeaturePyramid, divisor: usize, channels: usize) -> Result<LevelSampler<'a>> {
        let level = pyr.level_by_divisor(divisor).ok_or_else(|| {
            Error::Dimension(format!("feature pyramid has no div-{divisor} level"))
        })?;
        if level.raster.channels != channels {
            return Err(Error::Dimension(format!(
                "level div-{divisor} has {} channels, volume expects {channels}",
                level.raster.channels
            )));
        }
        Ok(LevelSampler {
            data: &level.raster.data,
            w: level.raster.width,
            h: level.raster.height,
            c: channels,
            inv_div: 1.0 / divisor as f64,
            half_off: 0.5 * (1.0 / divisor as f64) - 0.5,
        })
    }

    /// Accumulate the sample at full-res pixel `(px, py)` into `out` with
    /// weight 1; returns false when outside the level raster.
    #[inline]
    fn sample(&self, px: f64, py: f64, out: &mut [f32]) -> bool {
        // texel = (px + 0.5)/div - 0.5
        let tx = px * self.inv_div + self.half_off;
        let ty = py * self.inv_div + self.half_off;
        if !(tx >= 0.0 && ty >= 0.0 && tx <= (self.w - 1) as f64 && ty <= (self.h - 1) as f64) {
            return false;
        }
        let x0 = tx as usize;
        let y0 = ty as usize;
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let fx = (tx - x0 as f64) as f32;
        let fy = (ty - y0 as f64) as f32;
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w10 = fx * (1.0 - fy);
        let w01 = (1.0 - fx) * fy;
        let w11 = fx * fy;
        let c = self.c;
        let p00 = &self.data[(y0 * self.w + x0) * c..(y0 * self.w + x0) * c + c];
        let p10 = &self.data[(y0 * self.w + x1) * c..(y0 * self.w + x1) * c + c];
        let p01 = &self.data[(y1 * self.w + x0) * c..(y1 * self.w + x0) * c + c];
        let p11 = &self.data[(y1 * self.w + x1) * c..(y1 * self.w + x1) * c + c];
        for ch in 0..c {
            out[ch] = w00 * p00[ch] + w10 * p10[ch] + w01 * p01[ch] + w11 * p11[ch];
        }
        true
    }
}

/// Affine voxel-to-camera map for a pose: `x_cam = M * voxel_unit + b`, with
/// the diameter scaling and object-center offset folded in.
struct VoxelMap {
    m: [[f64; 3]; 3],
    b: Vec3,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

impl VoxelMap {
    fn new(pose: &Pose, k: &crate::camera::Intrinsics, diameter: f64, center: Vec3) -> VoxelMap {
        let r = pose.q.to_matrix();
        let sd = pose.s * diameter;
        let m = [
            [r[0][0] * sd, r[0][1] * sd, r[0][2] * sd],
            [r[1][0] * sd, r[1][1] * sd, r[1][2] * sd],
            [r[2][0] * sd, r[2][1] * sd, r[2][2] * sd],
        ];
        let rc = pose.q.rotate(center);
        let b = [
            rc[0] * pose.s + pose.t[0],
            rc[1] * pose.s + pose.t[1],
            rc[2] * pose.s + pose.t[2],
        ];
        VoxelMap {
            m,
            b,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
        }
    }

    /// Project a unit-cube voxel center; `None` when behind the camera.
    #[inline]
    fn project(&self, v: Vec3) -> Option<(f64, f64)> {
        let z = self.m[2][0] * v[0] + self.m[2][1] * v[1] + self.m[2][2] * v[2] + self.b[2];
        if z <= crate::camera::EPS_DEPTH {
            return None;
        }
        let x = self.m[0][0] * v[0] + self.m[0][1] * v[1] + self.m[0][2] * v[2] + self.b[0];
        let y = self.m[1][0] * v[0] + self.m[1][1] * v[1] + self.m[1][2] * v[2] + self.b[1];
        Some((self.fx * x / z + self.cx, self.fy * y / z + self.cy))
    }
}

/// Build a support volume over the given view subset: per voxel, mean and
/// variance of the features sampled where the voxel projects in each view.
/// A voxel is valid once at least `min_views` views observe it (capped at
/// the subset size).
pub fn build_support_volume(
    supports: &SupportSet,
    pyrs: &[FeaturePyramid],
    subset: &[usize],
    spec: &VolumeSpec,
    min_views: usize,
) -> Result<FeatureVolume> {
    if subset.is_empty() {
        return Err(Error::InvalidCount("support volume: empty subset".into()));
    }
    let need = min_views.min(subset.len()).max(1);
    let res = spec.resolution;
    let c = spec.channels;

    let samplers: Vec<LevelSampler> = subset
        .iter()
        .map(|i| LevelSampler::new(&pyrs[*i], spec.divisor, c))
        .collect::<Result<_>>()?;
    let maps: Vec<VoxelMap> = subset
        .iter()
        .map(|i| {
            VoxelMap::new(
                &supports.views[*i].pose,
                &supports.views[*i].intrinsics,
                supports.diameter,
                supports.center,
            )
        })
        .collect();

    let mut vol = FeatureVolume::zeros(spec);
    let mut sample = vec![0.0f32; c];
    let mut mean = vec![0.0f64; c];
    let mut m2 = vec![0.0f64; c];
    let mut any_valid = false;

    let mut idx = 0usize;
    for k in 0..res {
        for j in 0..res {
            for i in 0..res {
                let vc = voxel_center(i, j, k, res);
                mean.fill(0.0);
                m2.fill(0.0);
                let mut n = 0u32;
                for (map, sampler) in maps.iter().zip(&samplers) {
                    let Some((px, py)) = map.project(vc) else {
                        continue;
                    };
                    if !sampler.sample(px, py, &mut sample) {
                        continue;
                    }
                    n += 1;
                    let inv_n = 1.0 / n as f64;
                    for ch in 0..c {
                        let x = sample[ch] as f64;
                        let delta = x - mean[ch];
                        mean[ch] += delta * inv_n;
                        m2[ch] += delta * (x - mean[ch]);
                    }
                }
                if n as usize >= need {
                    vol.valid[idx] = true;
                    any_valid = true;
                    let base = idx * c;
                    let inv_n = 1.0 / n as f64;
                    for ch in 0..c {
                        vol.mean[base + ch] = mean[ch] as f32;
                        vol.var[base + ch] = (m2[ch] * inv_n).max(0.0) as f32;
                    }
                }
                idx += 1;
            }
        }
    }
    if !any_valid {
        return Err(Error::EmptyVolume);
    }
    Ok(vol)
}

/// Fraction of voxels that must remain valid for a target unprojection (and
/// for a cost overlap) to count.
pub const MIN_VALID_FRACTION: f64 = 0.05;

/// Unproject the target view into a fresh volume under a hypothesis pose.
/// Fails with `OutOfView` when fewer than 5% of voxels project in-bounds.
pub fn unproject_target(
    target: &FeaturePyramid,
    k: &crate::camera::Intrinsics,
    hypothesis: &Pose,
    spec: &VolumeSpec,
    diameter: f64,
    center: Vec3,
) -> Result<FeatureVolume> {
    let mut vol = FeatureVolume::zeros(spec);
    unproject_target_into(&mut vol, target, k, hypothesis, spec, diameter, center)?;
    Ok(vol)
}

/// Allocation-free variant of [`unproject_target`] writing into `vol`.
#[allow(clippy::too_many_arguments)]
pub fn unproject_target_into(
    vol: &mut FeatureVolume,
    target: &FeaturePyramid,
    k: &crate::camera::Intrinsics,
    hypothesis: &Pose,
    spec: &VolumeSpec,
    diameter: f64,
    center: Vec3,
) -> Result<()> {
    debug_assert_eq!(vol.resolution, spec.resolution);
    debug_assert_eq!(vol.channels, spec.channels);
    let sampler = LevelSampler::new(target, spec.divisor, spec.channels)?;
    let map = VoxelMap::new(hypothesis, k, diameter, center);
    let res = spec.resolution;
    let c = spec.channels;
    let mut n_valid = 0usize;
    let mut idx = 0usize;
    for kz in 0..res {
        for j in 0..res {
            for i in 0..res {
                let vc = voxel_center(i, j, kz, res);
                let ok = match map.project(vc) {
                    Some((px, py)) => {
                        sampler.sample(px, py, &mut vol.mean[idx * c..(idx + 1) * c])
                    }
                    None => false,
                };
                vol.valid[idx] = ok;
                n_valid += ok as usize;
                idx += 1;
            }
        }
    }
    let frac = n_valid as f64 / vol.voxel_count() as f64;
    if frac < MIN_VALID_FRACTION {
        return Err(Error::OutOfView {
            valid_percent: frac * 100.0,
        });
    }
    Ok(())
}

/// Matching cost: mean over jointly valid voxels of the per-channel mean
/// squared feature difference, plus `lambda_var` times the mean support
/// variance over the same voxels. Infinite when the joint-valid fraction
/// falls under 5%.
pub fn matching_cost(
    target_vol: &FeatureVolume,
    support_vol: &FeatureVolume,
    lambda_var: f64,
) -> Result<f64> {
    if target_vol.resolution != support_vol.resolution
        || target_vol.channels != support_vol.channels
    {
        return Err(Error::Dimension(format!(
            "volume shapes differ: {}^3x{} vs {}^3x{}",
            target_vol.resolution,
            target_vol.channels,
            support_vol.resolution,
            support_vol.channels
        )));
    }
    let c = target_vol.channels;
    let n_vox = target_vol.voxel_count();
    let mut joint = 0usize;
    let mut cost = 0.0f64;
    let mut var_sum = 0.0f64;
    for idx in 0..n_vox {
        if !(target_vol.valid[idx] && support_vol.valid[idx]) {
            continue;
        }
        joint += 1;
        let a = &target_vol.mean[idx * c..(idx + 1) * c];
        let b = &support_vol.mean[idx * c..(idx + 1) * c];
        let mut d2 = 0.0f32;
        for ch in 0..c {
            let d = a[ch] - b[ch];
            d2 += d * d;
        }
        cost += d2 as f64;
        if lambda_var != 0.0 {
            let v = &support_vol.var[idx * c..(idx + 1) * c];
            var_sum += v.iter().map(|x| *x as f64).sum::<f64>();
        }
    }
    if (joint as f64) < MIN_VALID_FRACTION * n_vox as f64 {
        return Ok(f64::INFINITY);
    }
    let denom = (joint * c) as f64;
    Ok(cost / denom + lambda_var * var_sum / denom)
}

const CVOL_MAGIC: &[u8; 4] = b"CVOL";

/// Dump a volume: magic "CVOL", u32 resolution, u32 channels, res^3*c f32
/// mean, res^3*c f32 var, then the validity bitmap (res^3 bits, LSB-first).
pub fn write_cvol(path: &Path, vol: &FeatureVolume) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CVOL_MAGIC)?;
    w.write_all(&(vol.resolution as u32).to_le_bytes())?;
    w.write_all(&(vol.channels as u32).to_le_bytes())?;
    for v in vol.mean.iter().chain(&vol.var) {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut bits = vec![0u8; vol.voxel_count().div_ceil(8)];
    for (i, v) in vol.valid.iter().enumerate() {
        if *v {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    w.write_all(&bits)?;
    Ok(())
}

/// Read a volume dump written by [`write_cvol`].
pub fn read_cvol(path: &Path) -> Result<FeatureVolume> {
    let bytes = fs::read(path)?;
    let fail = |msg: &str| Error::Format(format!("{}: {}", path.display(), msg));
    if bytes.len() < 12 || &bytes[0..4] != CVOL_MAGIC {
        return Err(fail("missing CVOL magic"));
    }
    let res = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if res == 0 || res > 512 || c == 0 || c > 4096 {
        return Err(fail("implausible volume header"));
    }
    let n = res * res * res;
    let floats = 2 * n * c;
    let bitmap_len = n.div_ceil(8);
    if bytes.len() < 12 + floats * 4 + bitmap_len {
        return Err(fail("truncated payload"));
    }
    let mut mean = Vec::with_capacity(n * c);
    let mut var = Vec::with_capacity(n * c);
    for i in 0..n * c {
        let off = 12 + i * 4;
        mean.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
    }
    for i in 0..n * c {
        let off = 12 + (n * c + i) * 4;
        var.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
    }
    let bits = &bytes[12 + floats * 4..12 + floats * 4 + bitmap_len];
    let valid = (0..n).map(|i| bits[i / 8] & (1 << (i % 8)) != 0).collect();
    Ok(FeatureVolume {
        resolution: res,
        channels: c,
        mean,
        var,
        valid,
    })
}
