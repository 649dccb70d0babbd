//! Learnable graph PnP: k-NN graphs over correspondence clusters,
//! distance-weighted edge convolutions, max pooling, and a pose-regression
//! head, trained end-to-end with the tape-based differentiation engine.

mod graph;
mod losses;
mod model;
mod train;

pub use graph::{build_graph, BandwidthMode, LocalGraph};
pub use losses::{loss_focal, loss_keypoint, loss_pose, loss_total, LossComponents};
pub use model::{
    edge_conv_forward, DgPnpModel, EdgeConvLayer, ForwardTrace, HeadMlp, KfaNet, ModelConfig,
    ModelGrads, Tensor,
};
pub use train::{train, EpochStats, LrSchedule, TrainConfig, TrainHistory, TrainSample};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DgPnpError {
    #[error("cluster of {m} vertices cannot support k={k} neighbors")]
    ClusterTooSmall { m: usize, k: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("probability {0} outside (0, 1)")]
    ProbabilityOutOfRange(f64),
    #[error("forward trace does not match this model: {0}")]
    TapeMismatch(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("k-NN feature aggregation needs a depth map")]
    MissingDepthMap,
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Tape(#[from] crate::tape::TapeError),
}
