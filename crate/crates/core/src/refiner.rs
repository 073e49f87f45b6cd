//! Cascaded coarse-to-fine pose search.
//!
//! Each stage discretizes the 7-dimensional pose residual (3 rotation, 3
//! translation, 1 log-scale) into per-dimension bin grids spanning the
//! stage's search range, then minimizes the volume matching cost by
//! coordinate descent over those grids. Ranges anneal by `w` between stages
//! while the grids move to finer volumes; after the coarsest stage only the
//! lowest-cost hypothesis survives.

use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::features::FeaturePyramid;
use crate::initializer::{PoseHypothesis, SupportSet};
use crate::math;
use crate::pose::{apply_residual_in, Pose, PoseResidual, RotationFrame};
use crate::volume::{
    build_support_volume, matching_cost, unproject_target_into, FeatureVolume, VolumeSpec,
};

/// One cascade stage: bin count, residual search half-widths, volume shape
/// and coordinate-descent sweep count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: usize,
    /// Bins per residual dimension.
    pub bins: usize,
    /// Per-dimension half-widths (rotation radians, translation in
    /// object-diameter units, log-scale).
    pub range: PoseResidual,
    pub volume: VolumeSpec,
    /// Coordinate-search passes over the 7 dimensions.
    pub sweeps: usize,
}

/// Derived bin interval (adjacent bin-center spacing) for one dimension.
pub fn bin_interval(range: f64, bins: usize) -> f64 {
    2.0 * range / bins as f64
}

/// Build the annealed stage list: stage `t` uses `bins[t]` and half-widths
/// `base_range * w^t`, paired with `volumes[t]`.
pub fn annealed_stages(
    bins: &[usize],
    base_range: &PoseResidual,
    anneal_w: f64,
    volumes: &[VolumeSpec],
    sweeps: usize,
) -> Result<Vec<StageConfig>> {
    if bins.len() != volumes.len() || bins.is_empty() {
        return Err(Error::Config(
            "stage bins and volume specs must be non-empty and aligned".into(),
        ));
    }
    if !(anneal_w > 0.0 && anneal_w <= 1.0) {
        return Err(Error::Config("annealing factor w must be in (0, 1]".into()));
    }
    let mut stages = Vec::with_capacity(bins.len());
    for (t, (b, vol)) in bins.iter().zip(volumes).enumerate() {
        let f = anneal_w.powi(t as i32);
        stages.push(StageConfig {
            stage: t,
            bins: *b,
            range: PoseResidual {
                rot: math::scale(base_range.rot, f),
                trans: math::scale(base_range.trans, f),
                log_s: base_range.log_s * f,
            },
            volume: *vol,
            sweeps,
        });
    }
    Ok(stages)
}

/// Bin-center offsets of `bins` equal intervals on `[-range, +range]`, with
/// an explicit zero offset appended (the keep-current option; bin centers
/// only contain 0 when `bins` is odd).
pub fn make_bin_grid(range: f64, bins: usize) -> Result<Vec<f64>> {
    if bins < 2 {
        return Err(Error::InvalidBins(bins));
    }
    if !(range > 0.0) {
        return Err(Error::Config(format!(
            "bin grid range must be positive, got {range}"
        )));
    }
    let step = 2.0 * range / bins as f64;
    let mut offsets: Vec<f64> = (0..bins)
        .map(|i| -range + (i as f64 + 0.5) * step)
        .collect();
    offsets.push(0.0);
    Ok(offsets)
}

/// Per-dimension grids for a stage (rotation x3, translation x3, log-scale).
pub fn stage_grids(stage: &StageConfig) -> Result<[Vec<f64>; 7]> {
    Ok([
        make_bin_grid(stage.range.rot[0], stage.bins)?,
        make_bin_grid(stage.range.rot[1], stage.bins)?,
        make_bin_grid(stage.range.rot[2], stage.bins)?,
        make_bin_grid(stage.range.trans[0], stage.bins)?,
        make_bin_grid(stage.range.trans[1], stage.bins)?,
        make_bin_grid(stage.range.trans[2], stage.bins)?,
        make_bin_grid(stage.range.log_s, stage.bins)?,
    ])
}

/// Outcome of one coordinate search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub pose: Pose,
    pub cost: f64,
    pub start_cost: f64,
    /// Chosen offset per residual dimension.
    pub offsets: [f64; 7],
    pub evals: u64,
}

/// Coordinate descent over the product of per-dimension offset grids: for
/// each sweep and each dimension, all offsets are evaluated with the other
/// dimensions held at their current values and the argmin replaces the
/// dimension's offset. Ties prefer the smaller |offset|, then the negative
/// side. The search never leaves the product grid, so the final cost is
/// never above the start cost.
pub fn coordinate_search(
    cost: &mut dyn FnMut(&Pose) -> f64,
    start: &Pose,
    grids: &[Vec<f64>; 7],
    sweeps: usize,
    diameter: f64,
    frame: RotationFrame,
) -> Result<SearchOutcome> {
    let mut residual = PoseResidual::zero();
    let mut evals = 0u64;
    let mut eval_at = |r: &PoseResidual, evals: &mut u64| -> f64 {
        *evals += 1;
        cost(&apply_residual_in(start, r, diameter, frame))
    };
    let start_cost = eval_at(&residual, &mut evals);
    let mut best_cost = start_cost;

    for _sweep in 0..sweeps {
        for dim in 0..7 {
            let mut best_offset = residual.component(dim);
            let mut dim_best = best_cost;
            for offset in &grids[dim] {
                let mut trial = residual;
                trial.set_component(dim, *offset);
                let c = eval_at(&trial, &mut evals);
                let better = c < dim_best
                    || (c == dim_best
                        && (offset.abs() < best_offset.abs()
                            || (offset.abs() == best_offset.abs() && *offset < best_offset)));
                if better {
                    dim_best = c;
                    best_offset = *offset;
                }
            }
            residual.set_component(dim, best_offset);
            best_cost = dim_best;
        }
    }
    if !best_cost.is_finite() {
        return Err(Error::NoValidPose);
    }
    Ok(SearchOutcome {
        pose: apply_residual_in(start, &residual, diameter, frame),
        cost: best_cost,
        start_cost,
        offsets: [
            residual.rot[0],
            residual.rot[1],
            residual.rot[2],
            residual.trans[0],
            residual.trans[1],
            residual.trans[2],
            residual.log_s,
        ],
        evals,
    })
}

/// Cascade knobs beyond the stage list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    /// Support views per volume (nearest by camera center).
    pub neighbors: usize,
    /// Views required for a support voxel to be valid.
    pub min_views: usize,
    /// Weight of the support-variance term in the matching cost.
    pub lambda_var: f64,
    pub rotation_frame: RotationFrame,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            neighbors: 6,
            min_views: 2,
            lambda_var: 0.0,
            rotation_frame: RotationFrame::Camera,
        }
    }
}

/// Per-stage trace entry for the surviving search path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: usize,
    pub resolution: usize,
    pub channels: usize,
    pub bins: usize,
    pub start_cost: f64,
    pub cost: f64,
    pub offsets: [f64; 7],
    pub pose: Pose,
    pub evals: u64,
}

/// Stage-0 outcome per hypothesis (infinite cost = never in view).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisOutcome {
    pub hypothesis: usize,
    pub cost: f64,
}

/// Full refinement result with diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementResult {
    pub pose: Pose,
    /// Index into the input hypothesis list.
    pub winner: usize,
    pub stage0: Vec<HypothesisOutcome>,
    pub stages: Vec<StageTrace>,
    pub total_evals: u64,
}

/// Indices of the `n` support views whose camera centers are nearest to the
/// pose's camera center.
fn nearest_views(supports: &SupportSet, pose: &Pose, n: usize) -> Vec<usize> {
    let here = pose.camera_center();
    let mut order: Vec<(f64, usize)> = supports
        .views
        .iter()
        .enumerate()
        .map(|(i, v)| (math::distance(v.pose.camera_center(), here), i))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    order.into_iter().take(n).map(|(_, i)| i).collect()
}

/// Run the cascade: stage 0 refines every hypothesis on the coarsest volume,
/// the lowest-cost hypothesis survives, and later stages refine the survivor
/// with annealed ranges over finer volumes.
#[allow(clippy::too_many_arguments)]
pub fn cascade_refine(
    target: &FeaturePyramid,
    target_k: &Intrinsics,
    supports: &SupportSet,
    support_pyrs: &[FeaturePyramid],
    hypotheses: &[PoseHypothesis],
    stages: &[StageConfig],
    cfg: &CascadeConfig,
) -> Result<RefinementResult> {
    if hypotheses.is_empty() {
        return Err(Error::InvalidCount("cascade needs >= 1 hypothesis".into()));
    }
    if stages.is_empty() {
        return Err(Error::Config("cascade needs >= 1 stage".into()));
    }
    for pair in stages.windows(2) {
        if pair[1].volume.resolution <= pair[0].volume.resolution {
            return Err(Error::Config(
                "stage volume resolutions must be strictly increasing".into(),
            ));
        }
    }

    let diameter = supports.diameter;
    let center = supports.center;
    let mut total_evals = 0u64;

    let mut run_stage = |stage: &StageConfig, start: &Pose| -> Result<SearchOutcome> {
        let subset = nearest_views(supports, start, cfg.neighbors);
        let svol = build_support_volume(supports, support_pyrs, &subset, &stage.volume, cfg.min_views)?;
        let mut scratch = FeatureVolume::zeros(&stage.volume);
        let grids = stage_grids(stage)?;
        let mut cost_fn = |pose: &Pose| -> f64 {
            match unproject_target_into(
                &mut scratch,
                target,
                target_k,
                pose,
                &stage.volume,
                diameter,
                center,
            ) {
                Ok(()) => matching_cost(&scratch, &svol, cfg.lambda_var)
                    .unwrap_or(f64::INFINITY),
                Err(_) => f64::INFINITY,
            }
        };
        coordinate_search(
            &mut cost_fn,
            start,
            &grids,
            stage.sweeps,
            diameter,
            cfg.rotation_frame,
        )
    };

    // stage 0: all hypotheses in parallel, then winner-take-all
    let stage0 = &stages[0];
    let mut outcomes: Vec<HypothesisOutcome> = Vec::with_capacity(hypotheses.len());
    let mut results: Vec<Option<SearchOutcome>> = Vec::with_capacity(hypotheses.len());
    for (hi, hyp) in hypotheses.iter().enumerate() {
        match run_stage(stage0, &hyp.pose) {
            Ok(out) => {
                total_evals += out.evals;
                outcomes.push(HypothesisOutcome {
                    hypothesis: hi,
                    cost: out.cost,
                });
                results.push(Some(out));
            }
            Err(Error::NoValidPose) | Err(Error::EmptyVolume) | Err(Error::OutOfView { .. }) => {
                outcomes.push(HypothesisOutcome {
                    hypothesis: hi,
                    cost: f64::INFINITY,
                });
                results.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let winner = outcomes
        .iter()
        .filter(|o| o.cost.is_finite())
        .min_by(|a, b| a.cost.partial_cmp(&b.cost).unwrap().then(a.hypothesis.cmp(&b.hypothesis)))
        .map(|o| o.hypothesis)
        .ok_or(Error::RefinementFailed)?;

    let first = results[winner].take().expect("winner has an outcome");
    let mut traces = vec![StageTrace {
        stage: stage0.stage,
        resolution: stage0.volume.resolution,
        channels: stage0.volume.channels,
        bins: stage0.bins,
        start_cost: first.start_cost,
        cost: first.cost,
        offsets: first.offsets,
        pose: first.pose,
        evals: first.evals,
    }];
    let mut current = first.pose;

    for stage in &stages[1..] {
        let out = run_stage(stage, &current)?;
        total_evals += out.evals;
        current = out.pose;
        traces.push(StageTrace {
            stage: stage.stage,
            resolution: stage.volume.resolution,
            channels: stage.volume.channels,
            bins: stage.bins,
            start_cost: out.start_cost,
            cost: out.cost,
            offsets: out.offsets,
            pose: out.pose,
            evals: out.evals,
        });
    }

    Ok(RefinementResult {
        pose: current,
        winner,
        stage0: outcomes,
        stages: traces,
        total_evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Quaternion;

    #[test]
    fn bin_grid_interval_midpoints() {
        let g = make_bin_grid(1.0, 4).unwrap();
        assert_eq!(g, vec![-0.75, -0.25, 0.25, 0.75, 0.0]);
        let g = make_bin_grid(std::f64::consts::FRAC_PI_4, 2).unwrap();
        assert_eq!(
            g,
            vec![
                -std::f64::consts::FRAC_PI_8,
                std::f64::consts::FRAC_PI_8,
                0.0
            ]
        );
    }

    #[test]
    fn bin_grid_rejects_degenerate_inputs() {
        assert!(matches!(make_bin_grid(1.0, 1), Err(Error::InvalidBins(1))));
        assert!(matches!(make_bin_grid(0.0, 4), Err(Error::Config(_))));
    }

    #[test]
    fn annealing_halves_ranges_exactly() {
        let base = PoseResidual {
            rot: [std::f64::consts::FRAC_PI_4; 3],
            trans: [0.25; 3],
            log_s: 1.5f64.ln(),
        };
        let stages = annealed_stages(
            &[16, 8, 4],
            &base,
            0.5,
            &crate::volume::default_volume_ladder(),
            2,
        )
        .unwrap();
        for (t, st) in stages.iter().enumerate() {
            let f = 0.5f64.powi(t as i32);
            assert_eq!(st.range.rot[0], std::f64::consts::FRAC_PI_4 * f);
            assert_eq!(st.range.trans[0], 0.25 * f);
            assert_eq!(st.range.log_s, 1.5f64.ln() * f);
        }
        assert_eq!(
            stages.iter().map(|s| s.bins).collect::<Vec<_>>(),
            vec![16, 8, 4]
        );
    }

    fn quadratic_cost(target: &PoseResidual) -> impl FnMut(&Pose) -> f64 + '_ {
        // separable quadratic over the residual taking identity -> pose
        move |pose: &Pose| {
            let r = crate::pose::residual_between(&Pose::identity(), pose, 1.0);
            let mut c = 0.0;
            for dim in 0..7 {
                let d = r.component(dim) - target.component(dim);
                c += d * d;
            }
            c
        }
    }

    #[test]
    fn separable_quadratic_matches_exhaustive_product_grid() {
        let target = PoseResidual {
            rot: [0.21, -0.34, 0.05],
            trans: [0.1, -0.22, 0.3],
            log_s: 0.12,
        };
        let grids: [Vec<f64>; 7] = std::array::from_fn(|_| make_bin_grid(0.5, 4).unwrap());
        let mut cost = quadratic_cost(&target);
        let out = coordinate_search(
            &mut cost,
            &Pose::identity(),
            &grids,
            1,
            1.0,
            RotationFrame::Camera,
        )
        .unwrap();
        // separable cost: per-dim argmin equals the product-grid argmin
        for dim in 0..7 {
            let best = grids[dim]
                .iter()
                .min_by(|a, b| {
                    let da = (**a - target.component(dim)).powi(2);
                    let db = (**b - target.component(dim)).powi(2);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assert_eq!(out.offsets[dim], *best, "dim {dim}");
        }
        assert_eq!(out.evals, 1 + 7 * 5);
    }

    // Exhaustive oracle over a 2-active-dimension grid: coordinate search on
    // a separable cost must hit the exact product-grid minimum.
    #[test]
    fn two_active_dims_match_exhaustive_enumeration() {
        let target = PoseResidual {
            rot: [0.0, 0.0, 0.3],
            trans: [-0.17, 0.0, 0.0],
            log_s: 0.0,
        };
        // rotation-z and translation-x active; others a tight dummy grid
        let tiny = vec![0.0];
        let gz = make_bin_grid(0.6, 8).unwrap();
        let gx = make_bin_grid(0.4, 8).unwrap();
        let grids: [Vec<f64>; 7] = [
            tiny.clone(),
            tiny.clone(),
            gz.clone(),
            gx.clone(),
            tiny.clone(),
            tiny.clone(),
            tiny,
        ];
        let mut cost = quadratic_cost(&target);
        let out = coordinate_search(
            &mut cost,
            &Pose::identity(),
            &grids,
            2,
            1.0,
            RotationFrame::Camera,
        )
        .unwrap();
        // enumerate the full product grid
        let mut best = f64::INFINITY;
        let mut cost2 = quadratic_cost(&target);
        for z in &gz {
            for x in &gx {
                let mut r = PoseResidual::zero();
                r.rot[2] = *z;
                r.trans[0] = *x;
                let p = crate::pose::apply_residual(&Pose::identity(), &r, 1.0);
                best = best.min(cost2(&p));
            }
        }
        assert!(
            (out.cost - best).abs() <= best.abs() * 1e-9 + 1e-15,
            "search={} exhaustive={}",
            out.cost,
            best
        );
    }

    #[test]
    fn already_minimal_start_keeps_zero_offsets() {
        let target = PoseResidual::zero();
        let grids: [Vec<f64>; 7] = std::array::from_fn(|_| make_bin_grid(0.5, 4).unwrap());
        let mut cost = quadratic_cost(&target);
        let out = coordinate_search(
            &mut cost,
            &Pose::identity(),
            &grids,
            2,
            1.0,
            RotationFrame::Camera,
        )
        .unwrap();
        assert_eq!(out.offsets, [0.0; 7]);
        assert_eq!(out.cost, 0.0);
    }

    #[test]
    fn constant_cost_returns_start_via_tie_break() {
        let grids: [Vec<f64>; 7] = std::array::from_fn(|_| make_bin_grid(1.0, 4).unwrap());
        let mut cost = |_: &Pose| 7.25f64;
        let out = coordinate_search(
            &mut cost,
            &Pose::identity(),
            &grids,
            3,
            1.0,
            RotationFrame::Camera,
        )
        .unwrap();
        assert_eq!(out.offsets, [0.0; 7]);
        assert_eq!(out.cost, 7.25);
        let p = out.pose;
        assert!(crate::pose::rotation_angle_deg(&p.q, &Quaternion::IDENTITY) < 1e-12);
    }

    #[test]
    fn all_infinite_cost_is_no_valid_pose() {
        let grids: [Vec<f64>; 7] = std::array::from_fn(|_| make_bin_grid(1.0, 2).unwrap());
        let mut cost = |_: &Pose| f64::INFINITY;
        assert!(matches!(
            coordinate_search(
                &mut cost,
                &Pose::identity(),
                &grids,
                1,
                1.0,
                RotationFrame::Camera
            ),
            Err(Error::NoValidPose)
        ));
    }

    #[test]
    fn search_cost_never_exceeds_start_cost() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            // random smooth non-separable positive cost
            let a: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut cost = |pose: &Pose| {
                let r = crate::pose::residual_between(&Pose::identity(), pose, 1.0);
                let mut u = 0.0;
                let mut v = 0.0;
                for dim in 0..7 {
                    u += a[dim] * r.component(dim);
                    v += b[dim] * r.component(dim);
                }
                1.0 + (u * 3.0).sin() * 0.4 + (v * 2.0).cos() * 0.4 + u * u + v * v
            };
            let grids: [Vec<f64>; 7] = std::array::from_fn(|_| make_bin_grid(0.4, 4).unwrap());
            let out = coordinate_search(
                &mut cost,
                &Pose::identity(),
                &grids,
                2,
                1.0,
                RotationFrame::Camera,
            )
            .unwrap();
            assert!(out.cost <= out.start_cost);
        }
    }
}
