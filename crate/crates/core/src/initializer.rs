//! Support-view selection and top-K pose initialization.
//!
//! Farthest point sampling spreads the shot budget over the view sphere;
//! target-vs-support similarity is scored by masked NCC over rotated support
//! crops at the detection pyramid level; the best-K distinct views become
//! pose hypotheses with in-plane rotation and detection-derived depth.

use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::detector::{crop_resize, object_box, DetectionResult};
use crate::error::{Error, Result};
use crate::features::{build_pyramid, ncc, FeatureConfig};
use crate::math::{self, Vec3};
use crate::pose::{Pose, Quaternion};
use crate::raster::Raster;

/// A posed reference image.
#[derive(Debug, Clone)]
pub struct SupportView {
    pub image: Raster,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

/// The reference set: posed views plus object geometry metadata.
#[derive(Debug, Clone)]
pub struct SupportSet {
    pub views: Vec<SupportView>,
    /// Max pairwise model distance, in object units.
    pub diameter: f64,
    /// Evaluate with ADDS instead of ADD.
    pub symmetric: bool,
    /// Object center in object coordinates (usually the origin).
    pub center: Vec3,
}

impl SupportSet {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::InvalidCount("support set has no views".into()));
        }
        if self.diameter <= 0.0 {
            return Err(Error::Config("object diameter must be positive".into()));
        }
        for (i, v) in self.views.iter().enumerate() {
            let depth = v.pose.transform_point(self.center)[2];
            if depth <= 0.0 {
                return Err(Error::Config(format!(
                    "support view {i} places the object behind the camera"
                )));
            }
        }
        Ok(())
    }

    /// Subset copy, preserving the given index order.
    pub fn subset(&self, indices: &[usize]) -> SupportSet {
        SupportSet {
            views: indices.iter().map(|i| self.views[*i].clone()).collect(),
            diameter: self.diameter,
            symmetric: self.symmetric,
            center: self.center,
        }
    }

    pub fn camera_centers(&self) -> Vec<Vec3> {
        self.views.iter().map(|v| v.pose.camera_center()).collect()
    }
}

/// Greedy farthest point sampling seeded at index 0. Each step adds the
/// point maximizing the minimum distance to the chosen set; ties keep the
/// lowest index. Returns indices in selection order.
pub fn fps_select(positions: &[Vec3], k: usize) -> Result<Vec<usize>> {
    let n = positions.len();
    if k == 0 || k > n {
        return Err(Error::InvalidCount(format!(
            "fps_select: k={k} out of range 1..={n}"
        )));
    }
    let mut chosen = Vec::with_capacity(k);
    chosen.push(0usize);
    let mut min_dist: Vec<f64> = positions
        .iter()
        .map(|p| math::distance(*p, positions[0]))
        .collect();
    while chosen.len() < k {
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for (i, d) in min_dist.iter().enumerate() {
            if *d > best_d {
                best_d = *d;
                best = i;
            }
        }
        chosen.push(best);
        for (i, d) in min_dist.iter_mut().enumerate() {
            let nd = math::distance(positions[i], positions[best]);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(chosen)
}

/// One (view, in-plane angle) similarity entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub view: usize,
    pub angle_deg: f64,
    pub score: f64,
}

/// Precomputed masked feature vectors of support crops at every in-plane
/// angle. Built once per support set; scoring a target is then a batch of
/// NCC evaluations.
pub struct RotatedCropBank {
    pub angles: Vec<f64>,
    pub level_divisor: usize,
    pub crop_size: usize,
    /// `feats[view][angle]`: masked flattened feature vector.
    feats: Vec<Vec<Vec<f32>>>,
    /// Texel indices inside the inscribed disk at the scoring level.
    mask: Vec<usize>,
    level_w: usize,
    level_h: usize,
    level_c: usize,
}

fn disk_mask(w: usize, h: usize) -> Vec<usize> {
    let cx = (w - 1) as f64 * 0.5;
    let cy = (h - 1) as f64 * 0.5;
    let r = w.min(h) as f64 * 0.5;
    let mut idx = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            if dx * dx + dy * dy <= r * r {
                idx.push(y * w + x);
            }
        }
    }
    idx
}

fn masked_flatten(raster: &Raster, mask: &[usize]) -> Vec<f32> {
    let c = raster.channels;
    let mut out = Vec::with_capacity(mask.len() * c);
    for i in mask {
        out.extend_from_slice(&raster.data[i * c..(i + 1) * c]);
    }
    out
}

impl RotatedCropBank {
    pub fn build(
        supports: &SupportSet,
        angles: &[f64],
        crop_size: usize,
        fcfg: &FeatureConfig,
        level_divisor: usize,
    ) -> Result<RotatedCropBank> {
        if angles.is_empty() {
            return Err(Error::Config("in-plane angle list is empty".into()));
        }
        supports.validate()?;
        let mut feats = Vec::with_capacity(supports.views.len());
        let mut dims = None;
        let mut mask = Vec::new();
        for view in &supports.views {
            let boxed = object_box(
                &view.pose,
                &view.intrinsics,
                supports.diameter,
                supports.center,
            )
            .ok_or(Error::NoTemplate)?;
            let crop = crop_resize(&view.image, boxed.0, boxed.1, crop_size);
            let mut per_angle = Vec::with_capacity(angles.len());
            for angle in angles {
                let rotated = if *angle == 0.0 {
                    crop.clone()
                } else {
                    crop.rotate_about_center(*angle)
                };
                let pyr = build_pyramid(&rotated, fcfg)?;
                let level = pyr
                    .level_by_divisor(level_divisor)
                    .ok_or_else(|| {
                        Error::Dimension(format!("no div-{level_divisor} level in crop pyramid"))
                    })?;
                if dims.is_none() {
                    dims = Some((
                        level.raster.width,
                        level.raster.height,
                        level.raster.channels,
                    ));
                    mask = disk_mask(level.raster.width, level.raster.height);
                }
                per_angle.push(masked_flatten(&level.raster, &mask));
            }
            feats.push(per_angle);
        }
        let (level_w, level_h, level_c) = dims.unwrap();
        Ok(RotatedCropBank {
            angles: angles.to_vec(),
            level_divisor,
            crop_size,
            feats,
            mask,
            level_w,
            level_h,
            level_c,
        })
    }

    /// Score a target crop (already feature-extracted at the bank's level)
    /// against every (view, angle); descending by score, ties by lower view
    /// then lower angle.
    pub fn score_level(&self, target_level: &Raster) -> Result<Vec<ViewScore>> {
        if target_level.width != self.level_w
            || target_level.height != self.level_h
            || target_level.channels != self.level_c
        {
            return Err(Error::Dimension(format!(
                "target crop level {}x{}x{} does not match bank {}x{}x{}",
                target_level.width,
                target_level.height,
                target_level.channels,
                self.level_w,
                self.level_h,
                self.level_c
            )));
        }
        let target_vec = masked_flatten(target_level, &self.mask);
        let mut scores = Vec::with_capacity(self.feats.len() * self.angles.len());
        for (vi, per_angle) in self.feats.iter().enumerate() {
            for (ai, feat) in per_angle.iter().enumerate() {
                scores.push(ViewScore {
                    view: vi,
                    angle_deg: self.angles[ai],
                    score: ncc(&target_vec, feat),
                });
            }
        }
        scores.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then(a.view.cmp(&b.view))
                .then(a.angle_deg.partial_cmp(&b.angle_deg).unwrap())
        });
        Ok(scores)
    }

    /// Convenience: build the target crop pyramid and score it.
    pub fn score(&self, target_crop: &Raster, fcfg: &FeatureConfig) -> Result<Vec<ViewScore>> {
        let pyr = build_pyramid(target_crop, fcfg)?;
        let level = pyr
            .level_by_divisor(self.level_divisor)
            .ok_or_else(|| Error::Dimension("missing scoring level".into()))?;
        self.score_level(&level.raster)
    }
}

/// Default in-plane angle grid: 36 steps of 10 degrees.
pub fn default_angles() -> Vec<f64> {
    (0..36).map(|i| i as f64 * 10.0).collect()
}

/// Score target-vs-support similarity over all (view, in-plane angle) pairs.
pub fn score_views(
    target_crop: &Raster,
    supports: &SupportSet,
    angles: &[f64],
    fcfg: &FeatureConfig,
    level_divisor: usize,
) -> Result<Vec<ViewScore>> {
    let bank = RotatedCropBank::build(supports, angles, target_crop.width, fcfg, level_divisor)?;
    bank.score(target_crop, fcfg)
}

/// A candidate starting pose for the refiner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseHypothesis {
    pub pose: Pose,
    pub view: usize,
    pub angle_deg: f64,
    pub score: f64,
}

/// Build up to K pose hypotheses from the scored list: the K highest-scoring
/// distinct views, each composed with its best in-plane rotation and with
/// translation/scale set so the object projects to the detected center at
/// the detected scale. Fewer than K available views truncates the list.
pub fn top_k_init(
    scores: &[ViewScore],
    k: usize,
    detection: &DetectionResult,
    supports: &SupportSet,
    target_k: &Intrinsics,
) -> Result<Vec<PoseHypothesis>> {
    if k == 0 {
        return Err(Error::InvalidCount("top_k_init: k must be >= 1".into()));
    }
    let mut out: Vec<PoseHypothesis> = Vec::with_capacity(k);
    for entry in scores {
        if out.len() == k {
            break;
        }
        if out.iter().any(|h| h.view == entry.view) {
            continue;
        }
        let view = &supports.views[entry.view];
        let pose = hypothesis_pose(view, entry.angle_deg, detection, supports, target_k);
        out.push(PoseHypothesis {
            pose,
            view: entry.view,
            angle_deg: entry.angle_deg,
            score: entry.score,
        });
    }
    if out.is_empty() {
        return Err(Error::NoValidPose);
    }
    Ok(out)
}

/// Compose the support pose with the recovered in-plane rotation and move it
/// along the detected center ray to the similar-triangles depth.
fn hypothesis_pose(
    view: &SupportView,
    angle_deg: f64,
    detection: &DetectionResult,
    supports: &SupportSet,
    target_k: &Intrinsics,
) -> Pose {
    // the support crop rotated by +angle matches the target, so the target
    // object is the support view rotated by +angle about the optical axis
    let q = Quaternion::from_axis_index(2, angle_deg.to_radians()).mul(&view.pose.q);
    // apparent size scales as f/z: size_t/size_s = (f_t * z_s)/(f_s * z_t)
    let z_support = view.pose.transform_point(supports.center)[2];
    let z_target = z_support * (target_k.fx / view.intrinsics.fx) / detection.scale;
    let ray = target_k.pixel_ray(detection.center[0], detection.center[1]);
    let center_cam = math::scale(ray, z_target);
    let s = view.pose.s;
    let t = math::sub(
        center_cam,
        math::scale(q.rotate(supports.center), s),
    );
    Pose::new(q, t, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fps_collinear_endpoints() {
        let pts: Vec<Vec3> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        assert_eq!(fps_select(&pts, 2).unwrap(), vec![0, 9]);
    }

    // Oracle: exhaustive enumeration of the third pick. After {0, 9} the
    // min-distances are min(x, 9-x); x=4 and x=5 tie at 4 and the tie-break
    // keeps the lowest index.
    #[test]
    fn fps_collinear_third_point_by_enumeration() {
        let pts: Vec<Vec3> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for cand in 0..10usize {
            let d = (cand as f64).min((9 - cand) as f64);
            if d > best.0 {
                best = (d, cand);
            }
        }
        assert_eq!(best.1, 4);
        assert_eq!(fps_select(&pts, 3).unwrap(), vec![0, 9, 4]);
    }

    #[test]
    fn fps_k_equals_n_returns_all() {
        let pts: Vec<Vec3> = (0..5).map(|i| [i as f64, 0.0, 0.0]).collect();
        let sel = fps_select(&pts, 5).unwrap();
        assert_eq!(sel.len(), 5);
        let mut sorted = sel.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn fps_rejects_bad_k() {
        let pts: Vec<Vec3> = (0..3).map(|i| [i as f64, 0.0, 0.0]).collect();
        assert!(matches!(
            fps_select(&pts, 4),
            Err(Error::InvalidCount(_))
        ));
        assert!(matches!(fps_select(&pts, 0), Err(Error::InvalidCount(_))));
    }

    #[test]
    fn fps_ignores_duplicates_of_unselected_points() {
        let base: Vec<Vec3> = vec![[0.0, 0.0, 0.0], [9.0, 0.0, 0.0], [4.0, 0.0, 0.0]];
        let mut dup = base.clone();
        dup.push([4.0, 0.0, 0.0]); // duplicate of a non-endpoint
        let a = fps_select(&base, 2).unwrap();
        let b = fps_select(&dup, 2).unwrap();
        assert_eq!(a, b);
    }
}
