//! Pose-accuracy metrics: ADD, ADD-S, REP, their accuracy thresholds, and
//! the area under the ADD-S accuracy curve.

use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError, Point3, Pose};

/// Distance threshold for a correct pose: ADD below 10% of the model
/// diameter.
pub const ADD_DIAMETER_FRACTION: f64 = 0.1;
/// Reprojection threshold for a correct pose, in pixels.
pub const REP_THRESHOLD_PX: f64 = 5.0;
/// Default AUC threshold cap, in meters (10 cm).
pub const AUC_MAX_THRESHOLD: f64 = 0.10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("mesh has {got} vertices; at least {need} required")]
    TooFewVertices { got: usize, need: usize },
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Vertex set of an object mesh, in the object frame (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct MeshModel {
    vertices: Vec<Point3>,
}

impl MeshModel {
    pub fn new(vertices: Vec<Point3>) -> Result<Self, MetricsError> {
        if vertices.is_empty() {
            return Err(MetricsError::TooFewVertices { got: 0, need: 1 });
        }
        if vertices
            .iter()
            .any(|v| !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()))
        {
            return Err(MetricsError::Geometry(GeometryError::DegenerateInput(
                "non-finite mesh vertex",
            )));
        }
        Ok(MeshModel { vertices })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Maximum pairwise vertex distance.
    pub fn diameter(&self) -> Result<f64, MetricsError> {
        if self.vertices.len() < 2 {
            return Err(MetricsError::TooFewVertices {
                got: self.vertices.len(),
                need: 2,
            });
        }
        let mut best = 0.0f64;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                let d = (a - b).norm();
                if d > best {
                    best = d;
                }
            }
        }
        Ok(best)
    }
}

/// Per-sample metric summary.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub add: f64,
    pub add_s: f64,
    /// Mean reprojection distance in pixels; `None` when a vertex fell
    /// behind the camera under either pose.
    pub rep: Option<f64>,
    pub add_correct: bool,
    pub rep_correct: bool,
}

impl MetricReport {
    /// Evaluates all metrics for one estimated pose against ground truth.
    pub fn evaluate(
        est: &Pose,
        gt: &Pose,
        mesh: &MeshModel,
        intr: &CameraIntrinsics,
        diameter: f64,
    ) -> Self {
        let add = add(est, gt, mesh);
        let add_s = add_s(est, gt, mesh);
        let rep_px = rep(est, gt, mesh, intr).ok();
        MetricReport {
            add,
            add_s,
            rep: rep_px,
            add_correct: is_add_correct(add, diameter),
            rep_correct: rep_px.is_some_and(is_rep_correct),
        }
    }
}

/// Mean distance between mesh vertices transformed by the two poses.
pub fn add(est: &Pose, gt: &Pose, mesh: &MeshModel) -> f64 {
    let sum: f64 = mesh
        .vertices()
        .iter()
        .map(|x| (gt.transform_point(x) - est.transform_point(x)).norm())
        .sum();
    sum / mesh.len() as f64
}

/// Symmetric variant: mean over gt-transformed vertices of the distance to
/// their closest est-transformed vertex.
pub fn add_s(est: &Pose, gt: &Pose, mesh: &MeshModel) -> f64 {
    let est_pts: Vec<Point3> = mesh
        .vertices()
        .iter()
        .map(|x| est.transform_point(x))
        .collect();
    let sum: f64 = mesh
        .vertices()
        .iter()
        .map(|x1| {
            let g = gt.transform_point(x1);
            est_pts
                .iter()
                .map(|e| (g - e).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    sum / mesh.len() as f64
}

/// Mean 2D distance between the projections of mesh vertices under the two
/// poses. Fails if any vertex lands behind the camera under either pose.
pub fn rep(
    est: &Pose,
    gt: &Pose,
    mesh: &MeshModel,
    intr: &CameraIntrinsics,
) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    for x in mesh.vertices() {
        let pe = intr.project(&est.transform_point(x))?;
        let pg = intr.project(&gt.transform_point(x))?;
        sum += (pe - pg).norm();
    }
    Ok(sum / mesh.len() as f64)
}

/// Strict threshold: correct when the distance is less than 10% of the
/// model diameter.
///
/// Compared as `10·distance < diameter`; multiplying the diameter by 0.1
/// instead would round the exact boundary case upward and break strictness.
pub fn is_add_correct(distance: f64, diameter: f64) -> bool {
    distance * (1.0 / ADD_DIAMETER_FRACTION) < diameter
}

/// Strict threshold: correct when the reprojection error is below 5 px.
pub fn is_rep_correct(rep_px: f64) -> bool {
    rep_px < REP_THRESHOLD_PX
}

/// Area under the accuracy-vs-threshold curve for thresholds in
/// `[0, max_threshold]`, normalized by `max_threshold`.
///
/// Accuracy at threshold τ is the fraction of distances strictly below τ,
/// so the curve is a step function and the area is computed exactly:
/// each distance d contributes `max(0, max_threshold − d)`.
pub fn auc_add_s(distances: &[f64], max_threshold: f64) -> Result<f64, MetricsError> {
    if distances.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let total: f64 = distances
        .iter()
        .map(|&d| (max_threshold - d).max(0.0))
        .sum();
    Ok(total / (distances.len() as f64 * max_threshold))
}
