//! Few-shot 6DoF object pose estimation from posed RGB support views.
//!
//! The pipeline detects the object in a target image by multi-scale template
//! correlation, initializes top-K pose hypotheses from the most similar
//! support views (with in-plane rotation search), and refines them by a
//! cascaded coarse-to-fine search over feature volumes: per stage, a discrete
//! bin grid over a 7-dimensional pose residual is swept by coordinate
//! descent against an explicit volume matching cost, with the search range
//! annealed between stages. A synthetic point-splat renderer provides exact
//! ground truth for end-to-end verification, and standard pose metrics
//! (ADD, ADDS, projection error) close the loop.

pub mod camera;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod features;
pub mod initializer;
pub mod math;
pub mod metrics;
pub mod pipeline;
pub mod pose;
pub mod raster;
pub mod refiner;
pub mod synth;
pub mod volume;

pub use camera::{project, warp_view, Intrinsics, Projection};
pub use detector::{detect, DetectionResult, DetectorConfig};
pub use error::{Error, Result};
pub use features::{build_pyramid, ncc, FeatureConfig, FeaturePyramid};
pub use initializer::{fps_select, top_k_init, PoseHypothesis, SupportSet, SupportView};
pub use metrics::{add_metric, adds_metric, diameter, proj_error, EvalRecord};
pub use pose::{
    apply_residual, residual_between, rotation_angle_deg, Pose, PoseResidual, Quaternion,
    RotationFrame,
};
pub use raster::Raster;
pub use refiner::{cascade_refine, coordinate_search, make_bin_grid, RefinementResult, StageConfig};
pub use volume::{build_support_volume, matching_cost, unproject_target, FeatureVolume};
