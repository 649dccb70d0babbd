//! Geometric 6D object-pose estimation toolkit.
//!
//! The crate estimates the rigid transform (rotation + translation) that maps
//! an object's model frame into the camera frame from 2D-3D correspondences.
//! It provides:
//!
//! - [`geometry`]: poses, rotations, pinhole intrinsics, projection and
//!   back-projection.
//! - [`metrics`]: ADD / ADD-S / REP pose-accuracy metrics, their accuracy
//!   thresholds, and AUC aggregation.
//! - [`keypoints`]: farthest-point sampling of model keypoints.
//! - [`synth`]: a synthetic calibrated-camera benchmark (sphere model,
//!   gradient background, correspondence noise and outliers).
//! - [`pnp`]: a classical EPnP solver plus a RANSAC wrapper.
//! - [`dgpnp`]: a learnable graph-convolutional PnP that regresses pose
//!   directly from correspondence clusters, with its training loop.
//! - [`depth`]: depth maps, cross-check uncertainty refinement, and k-NN
//!   depth feature aggregation.
//! - [`io`]: binary dataset/weight/raster formats, mesh loading, and the
//!   experiment configuration schema.
//! - [`bench`]: the noise/outlier sweep used by the CLI harness.

pub mod bench;
pub mod depth;
pub mod dgpnp;
pub mod geometry;
pub mod io;
pub mod keypoints;
pub mod metrics;
pub mod pnp;
pub mod synth;
pub mod tape;

pub use geometry::{CameraIntrinsics, GeometryError, Point2, Point3, Pose, Rotation, Rotation6D};
pub use metrics::{MeshModel, MetricReport};
