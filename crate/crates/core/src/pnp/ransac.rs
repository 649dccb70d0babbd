//! Hypothesize-and-verify RANSAC around the EPnP solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Point2, Point3, Pose};
use crate::synth::CorrespondenceSet;

use super::{epnp_solve, PnpError};

/// Minimal sample size; EPnP handles four points directly.
pub const MIN_SAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Reprojection inlier threshold, pixels.
    pub inlier_threshold: f64,
    pub confidence: f64,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            max_iterations: 200,
            inlier_threshold: 3.0,
            confidence: 0.999,
            rng_seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), PnpError> {
        if self.max_iterations == 0 {
            return Err(PnpError::DegenerateConfiguration(
                "max_iterations must be >= 1",
            ));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(PnpError::DegenerateConfiguration(
                "inlier_threshold must be > 0",
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(PnpError::DegenerateConfiguration(
                "confidence must lie in (0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RansacResult {
    pub pose: Pose,
    /// One flag per correspondence, keypoint-major flat order.
    pub inlier_mask: Vec<bool>,
    pub iterations_used: usize,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|m| **m).count()
    }
}

/// Robust pose estimation: repeatedly fit EPnP to four correspondences
/// drawn from distinct keypoint clusters, score by reprojection inliers,
/// adapt the iteration bound to the best inlier ratio, and refit on the
/// final consensus set.
pub fn ransac_pnp(
    corrs: &CorrespondenceSet,
    config: &RansacConfig,
) -> Result<RansacResult, PnpError> {
    config.validate()?;
    let total = corrs.total();
    if total < MIN_SAMPLE {
        return Err(PnpError::TooFewPoints {
            got: total,
            need: MIN_SAMPLE,
        });
    }

    let intr = *corrs.intrinsics();
    let (points3d, points2d): (Vec<Point3>, Vec<Point2>) =
        corrs.flat().map(|(p3, c)| (p3, c.pixel)).unzip();
    let n_clusters = corrs.keypoint_count();
    let m = corrs.hypotheses_per_keypoint();

    let residuals = |pose: &Pose, mask: &mut [bool]| -> usize {
        let mut count = 0;
        for (i, (p3, p2)) in points3d.iter().zip(&points2d).enumerate() {
            let ok = match intr.project(&pose.transform_point(p3)) {
                Ok(px) => (px - p2).norm() < config.inlier_threshold,
                Err(_) => false,
            };
            mask[i] = ok;
            count += usize::from(ok);
        }
        count
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut best_pose: Option<Pose> = None;
    let mut best_mask = vec![false; total];
    let mut best_inliers = 0usize;
    let mut scratch = vec![false; total];
    let mut iterations_used = 0usize;
    let mut cluster_order: Vec<usize> = (0..n_clusters).collect();

    for iter in 0..config.max_iterations {
        iterations_used = iter + 1;

        // Sample four correspondences from distinct clusters when possible
        // (repeated 3D keypoints would make the minimal EPnP degenerate).
        let sample: Vec<usize> = if n_clusters >= MIN_SAMPLE {
            for pick in 0..MIN_SAMPLE {
                let j = rng.random_range(pick..n_clusters);
                cluster_order.swap(pick, j);
            }
            cluster_order[..MIN_SAMPLE]
                .iter()
                .map(|&c| c * m + rng.random_range(0..m))
                .collect()
        } else {
            let mut idx: Vec<usize> = (0..total).collect();
            for pick in 0..MIN_SAMPLE {
                let j = rng.random_range(pick..total);
                idx.swap(pick, j);
            }
            idx.truncate(MIN_SAMPLE);
            idx
        };

        let s3: Vec<Point3> = sample.iter().map(|&i| points3d[i]).collect();
        let s2: Vec<Point2> = sample.iter().map(|&i| points2d[i]).collect();
        let Ok(pose) = epnp_solve(&s3, &s2, &intr) else {
            continue;
        };

        let inliers = residuals(&pose, &mut scratch);
        if inliers > best_inliers {
            best_inliers = inliers;
            best_mask.copy_from_slice(&scratch);
            best_pose = Some(pose);

            // Standard adaptive bound: enough iterations to hit an
            // all-inlier sample with the requested confidence.
            let w = inliers as f64 / total as f64;
            let p_good = w.powi(MIN_SAMPLE as i32);
            if p_good >= 1.0 {
                break;
            }
            let needed = (1.0 - config.confidence).ln() / (1.0 - p_good).ln();
            if needed.is_finite() && (iter + 1) as f64 >= needed {
                break;
            }
        }
    }

    if best_inliers < MIN_SAMPLE {
        return Err(PnpError::NoConsensus {
            best_inliers,
        });
    }
    let mut pose = best_pose.expect("inlier count implies a pose");

    // Final polish: refit on the consensus set and rescore.
    let in3: Vec<Point3> = (0..total).filter(|&i| best_mask[i]).map(|i| points3d[i]).collect();
    let in2: Vec<Point2> = (0..total).filter(|&i| best_mask[i]).map(|i| points2d[i]).collect();
    if let Ok(refit) = epnp_solve(&in3, &in2, &intr) {
        let refit_inliers = residuals(&refit, &mut scratch);
        if refit_inliers >= best_inliers {
            pose = refit;
            best_mask.copy_from_slice(&scratch);
        }
    }

    Ok(RansacResult {
        pose,
        inlier_mask: best_mask,
        iterations_used,
    })
}
