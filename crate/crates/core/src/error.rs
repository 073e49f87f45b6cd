//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("quaternion has zero norm")]
    InvalidQuaternion,

    #[error("image too small: {width}x{height}, minimum side {min}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("degenerate warp homography (condition estimate {cond:.3e})")]
    DegenerateWarp { cond: f64 },

    #[error("feature file format error: {0}")]
    Format(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("no usable template in support set")]
    NoTemplate,

    #[error("invalid count: {0}")]
    InvalidCount(String),

    #[error("empty volume: no voxel observed by enough views")]
    EmptyVolume,

    #[error("pose projects out of view ({valid_percent:.1}% of voxels valid)")]
    OutOfView { valid_percent: f64 },

    #[error("bin count must be at least 2, got {0}")]
    InvalidBins(usize),

    #[error("no valid pose: every cost evaluation was infinite")]
    NoValidPose,

    #[error("refinement failed for all hypotheses")]
    RefinementFailed,

    #[error("empty model point set")]
    EmptyModel,

    #[error("ground-truth point behind camera")]
    InvalidGt,

    #[error("empty render: object fully off-screen")]
    EmptyRender,

    #[error("report error: {0}")]
    Report(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input (config or dataset), as
    /// opposed to internal pipeline failures. The CLI maps these to exit
    /// code 2 and everything else to 3.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Dataset(_) | Error::InvalidCount(_)
        )
    }
}
