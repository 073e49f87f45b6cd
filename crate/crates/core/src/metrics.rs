//! Pose-accuracy metrics: ADD, ADDS, projection error, object diameter,
//! recall aggregation, box IoU and the stage-weighted voxel distance
//! diagnostic.

use serde::{Deserialize, Serialize};

use crate::camera::{project, Intrinsics, Projection};
use crate::error::{Error, Result};
use crate::initializer::fps_select;
use crate::math::{self, Vec3};
use crate::pose::Pose;
use crate::volume::voxel_center;

/// Per-target evaluation row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub object_id: String,
    pub target_id: String,
    /// Mean matched-correspondence distance (length units).
    pub add: f64,
    /// Mean nearest-neighbor distance (length units); `adds <= add` always.
    pub adds: f64,
    /// Mean projected-vertex distance (pixels).
    pub proj_err: f64,
    /// ADD(S)-0.1d: `adds` for symmetric objects, `add` otherwise, under 10%
    /// of the object diameter.
    pub pass_add_0_1d: bool,
    /// Projection error under 5 pixels.
    pub pass_prj5: bool,
}

/// Mean L2 distance between correspondingly transformed vertices.
pub fn add_metric(pts: &[Vec3], p_est: &Pose, p_gt: &Pose) -> Result<f64> {
    if pts.is_empty() {
        return Err(Error::EmptyModel);
    }
    let mut sum = 0.0;
    for p in pts {
        sum += math::distance(p_est.transform_point(*p), p_gt.transform_point(*p));
    }
    Ok(sum / pts.len() as f64)
}

/// Uniform-grid spatial index over a fixed point set for exact nearest
/// neighbors; results must (and do) equal O(n^2) brute force.
struct GridIndex {
    cell: f64,
    origin: Vec3,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
    points: Vec<Vec3>,
}

impl GridIndex {
    fn build(points: Vec<Vec3>) -> GridIndex {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max);
        // target a few points per cell
        let n = points.len().max(1);
        let cells_per_axis = ((n as f64).cbrt().ceil() as usize).clamp(1, 64);
        let cell = (extent / cells_per_axis as f64).max(1e-12);
        let dims = [
            ((hi[0] - lo[0]) / cell).floor() as usize + 1,
            ((hi[1] - lo[1]) / cell).floor() as usize + 1,
            ((hi[2] - lo[2]) / cell).floor() as usize + 1,
        ];
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for (i, p) in points.iter().enumerate() {
            let c = Self::cell_of(p, lo, cell, dims);
            cells[c].push(i as u32);
        }
        GridIndex {
            cell,
            origin: lo,
            dims,
            cells,
            points,
        }
    }

    fn cell_of(p: &Vec3, origin: Vec3, cell: f64, dims: [usize; 3]) -> usize {
        let ix = (((p[0] - origin[0]) / cell) as usize).min(dims[0] - 1);
        let iy = (((p[1] - origin[1]) / cell) as usize).min(dims[1] - 1);
        let iz = (((p[2] - origin[2]) / cell) as usize).min(dims[2] - 1);
        (iz * dims[1] + iy) * dims[0] + ix
    }

    /// Exact nearest-neighbor distance via expanding shell search: widen the
    /// ring until the best squared distance beats the nearest possible point
    /// in any unvisited shell.
    fn nearest_dist(&self, q: Vec3) -> f64 {
        let gx = ((q[0] - self.origin[0]) / self.cell).floor() as isize;
        let gy = ((q[1] - self.origin[1]) / self.cell).floor() as isize;
        let gz = ((q[2] - self.origin[2]) / self.cell).floor() as isize;
        let max_ring = self.dims.iter().max().unwrap() + 1;
        let mut best = f64::INFINITY;
        for ring in 0..=max_ring as isize {
            // once a neighbor is found, any farther shell is at least
            // (ring-1)*cell away from q (q may sit outside its clamped cell)
            if best.is_finite() {
                let safe = (ring - 1).max(0) as f64 * self.cell;
                if safe * safe > best {
                    break;
                }
            }
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let (cx, cy, cz) = (gx + dx, gy + dy, gz + dz);
                        if cx < 0
                            || cy < 0
                            || cz < 0
                            || cx >= self.dims[0] as isize
                            || cy >= self.dims[1] as isize
                            || cz >= self.dims[2] as isize
                        {
                            continue;
                        }
                        let idx = (cz as usize * self.dims[1] + cy as usize) * self.dims[0]
                            + cx as usize;
                        for pi in &self.cells[idx] {
                            let p = self.points[*pi as usize];
                            let d = math::sub(p, q);
                            best = best.min(math::dot(d, d));
                        }
                    }
                }
            }
        }
        best.sqrt()
    }
}

/// Mean nearest-neighbor distance from estimated-transformed vertices into
/// the ground-truth-transformed set (the symmetric-object metric).
pub fn adds_metric(pts: &[Vec3], p_est: &Pose, p_gt: &Pose) -> Result<f64> {
    if pts.is_empty() {
        return Err(Error::EmptyModel);
    }
    let gt: Vec<Vec3> = pts.iter().map(|p| p_gt.transform_point(*p)).collect();
    let index = GridIndex::build(gt);
    let mut sum = 0.0;
    for p in pts {
        sum += index.nearest_dist(p_est.transform_point(*p));
    }
    Ok(sum / pts.len() as f64)
}

/// Brute-force O(n^2) ADDS used as the oracle for the spatial index.
pub fn adds_metric_brute(pts: &[Vec3], p_est: &Pose, p_gt: &Pose) -> Result<f64> {
    if pts.is_empty() {
        return Err(Error::EmptyModel);
    }
    let gt: Vec<Vec3> = pts.iter().map(|p| p_gt.transform_point(*p)).collect();
    let mut sum = 0.0;
    for p in pts {
        let e = p_est.transform_point(*p);
        let mut best = f64::INFINITY;
        for g in &gt {
            let d = math::sub(*g, e);
            best = best.min(math::dot(d, d));
        }
        sum += best.sqrt();
    }
    Ok(sum / pts.len() as f64)
}

/// Mean pixel distance between projections under the estimated and
/// ground-truth poses. Ground-truth points behind the camera are an error;
/// estimated points behind the camera contribute a capped penalty of one
/// image diagonal.
pub fn proj_error(pts: &[Vec3], k: &Intrinsics, p_est: &Pose, p_gt: &Pose) -> Result<f64> {
    if pts.is_empty() {
        return Err(Error::EmptyModel);
    }
    let cap = ((k.width * k.width + k.height * k.height) as f64).sqrt();
    let mut sum = 0.0;
    for p in pts {
        let gt_px = match project(k, p_gt.transform_point(*p)) {
            Projection::Pixel(px) => px,
            Projection::Behind => return Err(Error::InvalidGt),
        };
        match project(k, p_est.transform_point(*p)) {
            Projection::Pixel(px) => {
                let d = ((px[0] - gt_px[0]).powi(2) + (px[1] - gt_px[1]).powi(2)).sqrt();
                sum += d.min(cap);
            }
            Projection::Behind => sum += cap,
        }
    }
    Ok(sum / pts.len() as f64)
}

/// Object diameter: max pairwise distance. Exact up to 5000 points; larger
/// sets are reduced to a 5000-point farthest-point subsample first (the
/// subsample keeps extremal points, so the estimate is tight in practice).
pub fn diameter(pts: &[Vec3]) -> Result<f64> {
    if pts.len() < 2 {
        return Err(Error::EmptyModel);
    }
    const EXACT_LIMIT: usize = 5000;
    let subsampled;
    let work: &[Vec3] = if pts.len() > EXACT_LIMIT {
        let idx = fps_select(pts, EXACT_LIMIT)?;
        subsampled = idx.into_iter().map(|i| pts[i]).collect::<Vec<_>>();
        &subsampled
    } else {
        pts
    };
    let mut best = 0.0f64;
    for i in 0..work.len() {
        for j in i + 1..work.len() {
            let d = math::sub(work[i], work[j]);
            best = best.max(math::dot(d, d));
        }
    }
    Ok(best.sqrt())
}

/// Stage-weighted voxel distance diagnostic: for each stage `k`, sum over the
/// `res_k^3` unit-cube voxel centers of the distance between the points
/// transformed by the stage estimate and by ground truth, weighted by
/// `lambda[k]`.
pub fn pose_loss_diag(
    p_est_stages: &[Pose],
    p_gt: &Pose,
    resolutions: &[usize],
    lambda: &[f64],
) -> f64 {
    assert_eq!(p_est_stages.len(), resolutions.len());
    assert_eq!(lambda.len(), resolutions.len());
    let mut total = 0.0;
    for ((pose, res), lam) in p_est_stages.iter().zip(resolutions).zip(lambda) {
        let mut stage_sum = 0.0;
        for k in 0..*res {
            for j in 0..*res {
                for i in 0..*res {
                    let c = voxel_center(i, j, k, *res);
                    stage_sum += math::distance(pose.transform_point(c), p_gt.transform_point(c));
                }
            }
        }
        total += lam * stage_sum;
    }
    total
}

/// Axis-aligned box `[x0, y0, x1, y1]`, `x0 <= x1`, `y0 <= y1`.
pub type Box2 = [f64; 4];

/// Intersection over union of two axis-aligned boxes, in `[0, 1]`.
pub fn box_iou(a: Box2, b: Box2) -> f64 {
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let area_a = (a[2] - a[0]).max(0.0) * (a[3] - a[1]).max(0.0);
    let area_b = (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Fraction of errors strictly below `threshold`. Non-decreasing in the
/// threshold.
pub fn recall(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|e| **e < threshold).count() as f64 / errors.len() as f64
}

/// Evaluate one target against ground truth.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    object_id: &str,
    target_id: &str,
    pts: &[Vec3],
    k: &Intrinsics,
    p_est: &Pose,
    p_gt: &Pose,
    object_diameter: f64,
    symmetric: bool,
) -> Result<EvalRecord> {
    let add = add_metric(pts, p_est, p_gt)?;
    let adds = adds_metric(pts, p_est, p_gt)?;
    let proj = proj_error(pts, k, p_est, p_gt)?;
    let score = if symmetric { adds } else { add };
    Ok(EvalRecord {
        object_id: object_id.to_string(),
        target_id: target_id.to_string(),
        add,
        adds,
        proj_err: proj,
        pass_add_0_1d: score < 0.1 * object_diameter,
        pass_prj5: proj < 5.0,
    })
}
