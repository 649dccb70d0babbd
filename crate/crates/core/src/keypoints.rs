//! 3D keypoint selection on the object surface via farthest point sampling.

use thiserror::Error;

use crate::geometry::Point3;
use crate::metrics::MeshModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KeypointError {
    #[error("invalid keypoint count {n}; must be within 1..={max}")]
    InvalidCount { n: usize, max: usize },
    #[error("seed index {index} out of range for {max} vertices")]
    InvalidSeed { index: usize, max: usize },
}

/// Keypoints selected from a mesh: vertex indices plus their coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    indices: Vec<usize>,
    points: Vec<Point3>,
}

impl KeypointSet {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Index of the vertex closest to the mesh centroid — the default FPS seed.
pub fn centroid_seed(mesh: &MeshModel) -> usize {
    let n = mesh.len() as f64;
    let centroid = mesh
        .vertices()
        .iter()
        .fold(nalgebra::Vector3::zeros(), |acc, p| acc + p.coords)
        / n;
    let mut best = (f64::INFINITY, 0usize);
    for (i, p) in mesh.vertices().iter().enumerate() {
        let d = (p.coords - centroid).norm_squared();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Greedy farthest point sampling.
///
/// The first keypoint is `seed_index`; each subsequent keypoint is the
/// unselected vertex maximizing its minimum distance to all previously
/// selected ones. Ties are broken by the lowest vertex index, which makes
/// the selection fully deterministic.
pub fn fps_select(
    mesh: &MeshModel,
    n: usize,
    seed_index: usize,
) -> Result<KeypointSet, KeypointError> {
    let m = mesh.len();
    if n == 0 || n > m {
        return Err(KeypointError::InvalidCount { n, max: m });
    }
    if seed_index >= m {
        return Err(KeypointError::InvalidSeed {
            index: seed_index,
            max: m,
        });
    }

    let verts = mesh.vertices();
    let mut indices = Vec::with_capacity(n);
    indices.push(seed_index);

    // min_dist[i] = squared distance from vertex i to the nearest selected one.
    let mut min_dist: Vec<f64> = verts
        .iter()
        .map(|p| (p - verts[seed_index]).norm_squared())
        .collect();

    while indices.len() < n {
        let mut best_idx = usize::MAX;
        let mut best_dist = -1.0;
        for (i, &d) in min_dist.iter().enumerate() {
            if indices.contains(&i) {
                continue;
            }
            if d > best_dist {
                best_dist = d;
                best_idx = i;
            }
        }
        indices.push(best_idx);
        for (i, d) in min_dist.iter_mut().enumerate() {
            let nd = (verts[i] - verts[best_idx]).norm_squared();
            if nd < *d {
                *d = nd;
            }
        }
    }

    let points = indices.iter().map(|&i| verts[i]).collect();
    Ok(KeypointSet { indices, points })
}
