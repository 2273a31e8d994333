//! Core domain layer for the RF pose estimation workspace: shared types
//! and units, the synthetic MIMO radar, RF heatmap preprocessing, 3D
//! Gaussian pose heatmaps, the repo-wide tensor blob format, and the
//! evaluation metrics.

pub mod blob;
pub mod error;
pub mod metrics;
pub mod pose_field;
pub mod preprocess;
pub mod radar;
pub mod types;

pub use error::{CoreError, Result};
pub use types::{
    BoundingBox, FeatureVec, Grid2D, Grid3D, Keypoints3D, PoseFrame, FEATURE_DIM,
    KEYPOINT_GROUPS, KEYPOINT_NAMES, NUM_KEYPOINTS,
};
