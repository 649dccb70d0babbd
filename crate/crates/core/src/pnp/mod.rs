//! Classical perspective-n-point estimation: an EPnP solver and a RANSAC
//! wrapper around it.

mod epnp;
mod ransac;

pub use epnp::epnp_solve;
pub use ransac::{ransac_pnp, RansacConfig, RansacResult};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("need at least {need} correspondences, got {got}")]
    TooFewPoints { got: usize, need: usize },
    #[error("mismatched correspondence lists: {points3d} 3D vs {points2d} 2D")]
    LengthMismatch { points3d: usize, points2d: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("no consensus: best hypothesis explains {best_inliers} correspondences")]
    NoConsensus { best_inliers: usize },
}
