//! Synthetic calibrated-camera benchmark: a sphere model observed by a
//! virtual pinhole camera, with correspondence hypotheses corrupted by
//! Gaussian pixel noise and uniform outliers over a gradient background.
//!
//! Generation is deterministic: every sample draws from its own stream
//! seeded by a stable hash of `(base_seed, split, sample_index)`, so
//! samples can be produced in parallel or on demand with identical output.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::depth::DepthMap;
use crate::geometry::{CameraIntrinsics, Point2, Point3, Pose, Rotation};
use crate::keypoints::{centroid_seed, fps_select, KeypointSet};
use crate::metrics::MeshModel;

/// Pixel margin kept between the projected object extent and the image
/// border so that noisy hypotheses stay in bounds (≥4 std at the largest
/// supported noise level).
pub const VISIBILITY_MARGIN_PX: f64 = 16.0;

/// Largest supported noise variance (px²).
pub const SIGMA_MAX: f64 = 15.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("sphere radius must be > 0, got {0}")]
    InvalidRadius(f64),
    #[error("sphere needs at least 4 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("noise variance must be within [0, {SIGMA_MAX}], got {0}")]
    InvalidSigma(f64),
    #[error("outlier rate must be within [0, 1), got {0}")]
    InvalidRate(f64),
    #[error("sphere center z={z} must exceed radius {radius}")]
    SphereBehindCamera { z: f64, radius: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no image placement satisfies the visibility margin at z={z}")]
    InfeasiblePlacement { z: f64 },
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Keypoints(#[from] crate::keypoints::KeypointError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

/// One 2D hypothesis for a 3D keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub keypoint_index: usize,
    pub pixel: Point2,
    pub rgb: [f64; 3],
    /// Camera-frame z at this pixel; `None` where the view ray misses the
    /// object.
    pub depth: Option<f64>,
    /// Ground-truth outlier label, available to tests and benchmarks only.
    pub is_outlier_gt: bool,
}

/// All hypotheses of a sample: `n` keypoints with `m` hypotheses each.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    keypoints: Arc<KeypointSet>,
    hypotheses: Vec<Vec<Correspondence>>,
    intrinsics: CameraIntrinsics,
}

impl CorrespondenceSet {
    pub fn new(
        keypoints: Arc<KeypointSet>,
        hypotheses: Vec<Vec<Correspondence>>,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self, SynthError> {
        if hypotheses.len() != keypoints.len() {
            return Err(SynthError::InvalidConfig(format!(
                "{} hypothesis clusters for {} keypoints",
                hypotheses.len(),
                keypoints.len()
            )));
        }
        let m = hypotheses.first().map_or(0, Vec::len);
        if m == 0 || hypotheses.iter().any(|c| c.len() != m) {
            return Err(SynthError::InvalidConfig(
                "every keypoint needs the same nonzero hypothesis count".into(),
            ));
        }
        Ok(CorrespondenceSet {
            keypoints,
            hypotheses,
            intrinsics,
        })
    }

    pub fn keypoints(&self) -> &KeypointSet {
        &self.keypoints
    }

    pub fn keypoints_arc(&self) -> Arc<KeypointSet> {
        Arc::clone(&self.keypoints)
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    /// Hypotheses for one keypoint cluster.
    pub fn cluster(&self, keypoint: usize) -> &[Correspondence] {
        &self.hypotheses[keypoint]
    }

    pub fn clusters(&self) -> &[Vec<Correspondence>] {
        &self.hypotheses
    }

    /// Number of keypoints n.
    pub fn keypoint_count(&self) -> usize {
        self.hypotheses.len()
    }

    /// Hypotheses per keypoint m.
    pub fn hypotheses_per_keypoint(&self) -> usize {
        self.hypotheses.first().map_or(0, Vec::len)
    }

    /// Total correspondence count M = n·m.
    pub fn total(&self) -> usize {
        self.keypoint_count() * self.hypotheses_per_keypoint()
    }

    /// Flat view in keypoint-major order: (3D keypoint, correspondence).
    pub fn flat(&self) -> impl Iterator<Item = (Point3, &Correspondence)> + '_ {
        self.hypotheses.iter().enumerate().flat_map(move |(i, c)| {
            let p = self.keypoints.points()[i];
            c.iter().map(move |corr| (p, corr))
        })
    }
}

/// One benchmark sample.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub correspondences: CorrespondenceSet,
    pub gt_pose: Pose,
    pub model: Arc<MeshModel>,
    pub depth_map: DepthMap,
    /// Noise variance this sample was generated with (px²).
    pub sigma: f64,
    /// Outlier fraction this sample was generated with.
    pub outlier_rate: f64,
}

/// Generation parameters for the synthetic benchmark.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub train_size: usize,
    pub test_size: usize,
    pub sphere_radius: f64,
    pub sphere_points: usize,
    /// Keypoint count n.
    pub keypoints: usize,
    /// Hypotheses per keypoint m.
    pub hypotheses: usize,
    pub z_min: f64,
    pub z_max: f64,
    /// Per-sample noise variance is drawn uniformly from this range (px²).
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Per-sample outlier fraction is drawn uniformly from this range.
    pub outlier_min: f64,
    pub outlier_max: f64,
    pub depth_map_width: u32,
    pub depth_map_height: u32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train_size: 20_000,
            test_size: 2_000,
            sphere_radius: 0.1,
            sphere_points: 1000,
            keypoints: 8,
            hypotheses: 10,
            z_min: 0.5,
            z_max: 2.0,
            sigma_min: 0.0,
            sigma_max: 15.0,
            outlier_min: 0.10,
            outlier_max: 0.30,
            depth_map_width: 64,
            depth_map_height: 48,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.train_size == 0 || self.test_size == 0 {
            return Err(SynthError::InvalidConfig("split sizes must be > 0".into()));
        }
        if !(self.sphere_radius > 0.0) {
            return Err(SynthError::InvalidRadius(self.sphere_radius));
        }
        if self.sphere_points < 4 {
            return Err(SynthError::TooFewVertices(self.sphere_points));
        }
        if self.keypoints == 0 || self.keypoints > self.sphere_points {
            return Err(SynthError::InvalidConfig(format!(
                "keypoint count {} out of range 1..={}",
                self.keypoints, self.sphere_points
            )));
        }
        if self.hypotheses == 0 {
            return Err(SynthError::InvalidConfig(
                "hypotheses per keypoint must be > 0".into(),
            ));
        }
        if !(self.z_min > self.sphere_radius && self.z_max > self.z_min) {
            return Err(SynthError::InvalidConfig(format!(
                "z range [{}, {}] must satisfy radius < z_min < z_max",
                self.z_min, self.z_max
            )));
        }
        for sigma in [self.sigma_min, self.sigma_max] {
            if !(0.0..=SIGMA_MAX).contains(&sigma) {
                return Err(SynthError::InvalidSigma(sigma));
            }
        }
        if self.sigma_min > self.sigma_max {
            return Err(SynthError::InvalidConfig(
                "sigma_min must not exceed sigma_max".into(),
            ));
        }
        for rate in [self.outlier_min, self.outlier_max] {
            if !(0.0..1.0).contains(&rate) {
                return Err(SynthError::InvalidRate(rate));
            }
        }
        if self.outlier_min > self.outlier_max {
            return Err(SynthError::InvalidConfig(
                "outlier_min must not exceed outlier_max".into(),
            ));
        }
        if self.depth_map_width == 0 || self.depth_map_height == 0 {
            return Err(SynthError::InvalidConfig(
                "depth map dimensions must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Stable 64-bit mix (splitmix64 finalizer).
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic per-sample seed derivation; namespaces keep the train,
/// test, and benchmark streams disjoint.
pub fn sub_seed(base: u64, namespace: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(namespace ^ splitmix64(index)))
}

/// Seed namespaces used by dataset generation and the bench harness.
pub mod seed_ns {
    pub const MODEL: u64 = 0x4d4f44;
    pub const TRAIN: u64 = 0x545251;
    pub const TEST: u64 = 0x545354;
    pub const BENCH: u64 = 0x424e43;
}

/// Dataset split selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn namespace(self) -> u64 {
        match self {
            Split::Train => seed_ns::TRAIN,
            Split::Test => seed_ns::TEST,
        }
    }
}

/// The benchmark camera: 640×480, focal length 800, principal point at the
/// image center.
pub fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0, 640, 480)
        .expect("default camera parameters are valid")
}

/// Sphere surface model: a Fibonacci lattice of `count` points at the given
/// radius, rotated by a seed-derived random rotation so distinct seeds give
/// distinct vertex sets.
pub fn make_sphere_model(radius: f64, count: usize, rng_seed: u64) -> Result<MeshModel, SynthError> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(SynthError::InvalidRadius(radius));
    }
    if count < 4 {
        return Err(SynthError::TooFewVertices(count));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let orient = random_rotation(&mut rng);
    let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
    let vertices = (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = std::f64::consts::TAU * (i as f64 / golden).fract();
            let p = nalgebra::Vector3::new(r * phi.cos(), r * phi.sin(), z) * radius;
            Point3::from(orient.apply(&p))
        })
        .collect();
    Ok(MeshModel::new(vertices)?)
}

/// Uniform rotation via Shoemake's quaternion construction.
pub fn random_rotation<R: Rng>(rng: &mut R) -> Rotation {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let tau = std::f64::consts::TAU;
    Rotation::from_unit_quaternion(
        u1.sqrt() * (tau * u3).cos(),
        (1.0 - u1).sqrt() * (tau * u2).sin(),
        (1.0 - u1).sqrt() * (tau * u2).cos(),
        u1.sqrt() * (tau * u3).sin(),
    )
}

/// Samples a pose with uniform rotation, z uniform in `z_range`, and x/y
/// chosen so the object center projects inside the central 80% of the image.
pub fn sample_pose<R: Rng>(
    rng: &mut R,
    z_range: (f64, f64),
    intr: &CameraIntrinsics,
) -> Result<Pose, SynthError> {
    sample_visible_pose(rng, z_range, intr, 0.0, 0.0)
}

/// Like [`sample_pose`], but additionally guarantees that every model point
/// within `object_radius` of the center projects at least `margin_px` away
/// from the image border. The center pixel is re-drawn until the bound
/// holds; z is drawn once, so its distribution stays uniform.
pub fn sample_visible_pose<R: Rng>(
    rng: &mut R,
    z_range: (f64, f64),
    intr: &CameraIntrinsics,
    object_radius: f64,
    margin_px: f64,
) -> Result<Pose, SynthError> {
    let (z_min, z_max) = z_range;
    assert!(
        0.0 < z_min && z_min <= z_max,
        "z range must satisfy 0 < z_min <= z_max"
    );
    let rotation = random_rotation(rng);
    let z = rng.random_range(z_min..=z_max);

    let w = f64::from(intr.width);
    let h = f64::from(intr.height);
    let (u_lo, u_hi) = (0.1 * w, 0.9 * w);
    let (v_lo, v_hi) = (0.1 * h, 0.9 * h);

    // Conservative projected-extent bound for a point within object_radius
    // of the center: |Δu| <= (|u_c − cx| + fx) · r / (z − r).
    let shrink = object_radius / (z - object_radius);
    for _ in 0..1000 {
        let u = rng.random_range(u_lo..=u_hi);
        let v = rng.random_range(v_lo..=v_hi);
        let du = ((u - intr.principal_x).abs() + intr.focal_x) * shrink;
        let dv = ((v - intr.principal_y).abs() + intr.focal_y) * shrink;
        let fits = u - du >= margin_px
            && u + du <= w - 1.0 - margin_px
            && v - dv >= margin_px
            && v + dv <= h - 1.0 - margin_px;
        if fits {
            let t = nalgebra::Vector3::new(
                (u - intr.principal_x) * z / intr.focal_x,
                (v - intr.principal_y) * z / intr.focal_y,
                z,
            );
            return Ok(Pose::new(rotation, t));
        }
    }
    Err(SynthError::InfeasiblePlacement { z })
}

/// Deterministic background color at a pixel: `(u/width, v/height, 0.5)`.
pub fn gradient_background_rgb(pixel: &Point2, intr: &CameraIntrinsics) -> [f64; 3] {
    [
        pixel.x / f64::from(intr.width),
        pixel.y / f64::from(intr.height),
        0.5,
    ]
}

/// Camera-frame z of the first intersection of the view ray through
/// `pixel` with a sphere of the given radius centered at `center`, or
/// `None` when the ray misses.
pub fn sphere_depth_at(
    pixel: &Point2,
    intr: &CameraIntrinsics,
    center: &nalgebra::Vector3<f64>,
    radius: f64,
) -> Option<f64> {
    let d = intr.pixel_ray(pixel);
    let dd = d.norm_squared();
    let dc = d.dot(center);
    let disc = dc * dc - dd * (center.norm_squared() - radius * radius);
    if disc < 0.0 {
        return None;
    }
    let s = (dc - disc.sqrt()) / dd;
    (s > 0.0).then_some(s)
}

/// Renders the analytic depth of a radius-`radius` sphere placed by `pose`
/// into a `map_w`×`map_h` grid. Map pixel (i, j) samples the image point
/// `(i·W/map_w, j·H/map_h)`; rays that miss the sphere are invalid.
pub fn render_depth(
    pose: &Pose,
    intr: &CameraIntrinsics,
    radius: f64,
    map_w: u32,
    map_h: u32,
) -> Result<DepthMap, SynthError> {
    let center = pose.translation;
    if center.z <= radius {
        return Err(SynthError::SphereBehindCamera {
            z: center.z,
            radius,
        });
    }
    let sx = f64::from(intr.width) / f64::from(map_w);
    let sy = f64::from(intr.height) / f64::from(map_h);
    let mut map = DepthMap::new_invalid(map_w, map_h);
    for j in 0..map_h {
        for i in 0..map_w {
            let pixel = Point2::new(f64::from(i) * sx, f64::from(j) * sy);
            if let Some(depth) = sphere_depth_at(&pixel, intr, &center, radius) {
                map.set(i, j, depth);
            }
        }
    }
    Ok(map)
}

/// Generates the `m` hypotheses per keypoint for one sample.
///
/// Each hypothesis is the exact projection plus isotropic Gaussian noise of
/// variance `sigma` (std `√sigma` px). A fraction `outlier_rate` of all
/// n·m hypotheses — rounded to the nearest count, chosen uniformly without
/// replacement — is replaced by uniform in-image pixels and flagged. RGB
/// comes from the gradient background at the final pixel; depth from the
/// analytic sphere intersection at the final pixel.
#[allow(clippy::too_many_arguments)]
pub fn generate_correspondences<R: Rng>(
    keypoints: &Arc<KeypointSet>,
    pose: &Pose,
    intr: &CameraIntrinsics,
    m: usize,
    sigma: f64,
    outlier_rate: f64,
    sphere_radius: f64,
    rng: &mut R,
) -> Result<CorrespondenceSet, SynthError> {
    if !(0.0..=SIGMA_MAX).contains(&sigma) {
        return Err(SynthError::InvalidSigma(sigma));
    }
    if !(0.0..1.0).contains(&outlier_rate) {
        return Err(SynthError::InvalidRate(outlier_rate));
    }

    let n = keypoints.len();
    let w = f64::from(intr.width);
    let h = f64::from(intr.height);
    let noise = if sigma > 0.0 {
        Some(Normal::new(0.0, sigma.sqrt()).expect("valid std"))
    } else {
        None
    };

    let mut clusters = Vec::with_capacity(n);
    for (i, kp) in keypoints.points().iter().enumerate() {
        let exact = intr.project(&pose.transform_point(kp))?;
        let mut cluster = Vec::with_capacity(m);
        for _ in 0..m {
            let pixel = match noise {
                Some(dist) => Point2::new(
                    (exact.x + dist.sample(rng)).clamp(0.0, w - 1e-6),
                    (exact.y + dist.sample(rng)).clamp(0.0, h - 1e-6),
                ),
                None => exact,
            };
            cluster.push(Correspondence {
                keypoint_index: i,
                pixel,
                rgb: [0.0; 3],
                depth: None,
                is_outlier_gt: false,
            });
        }
        clusters.push(cluster);
    }

    // Outlier selection: partial Fisher-Yates over the flat index range.
    let total = n * m;
    let outlier_count = (outlier_rate * total as f64).round() as usize;
    let mut indices: Vec<usize> = (0..total).collect();
    for pick in 0..outlier_count {
        let j = rng.random_range(pick..total);
        indices.swap(pick, j);
    }
    let mut chosen = indices[..outlier_count].to_vec();
    chosen.sort_unstable();
    for flat in chosen {
        let corr = &mut clusters[flat / m][flat % m];
        corr.pixel = Point2::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
        corr.is_outlier_gt = true;
    }

    let center = pose.translation;
    for cluster in &mut clusters {
        for corr in cluster.iter_mut() {
            corr.rgb = gradient_background_rgb(&corr.pixel, intr);
            corr.depth = sphere_depth_at(&corr.pixel, intr, &center, sphere_radius);
        }
    }

    CorrespondenceSet::new(Arc::clone(keypoints), clusters, *intr)
}

/// Shared per-dataset state: camera, sphere model, and selected keypoints.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: DatasetConfig,
    pub base_seed: u64,
    pub intrinsics: CameraIntrinsics,
    pub model: Arc<MeshModel>,
    pub keypoints: Arc<KeypointSet>,
}

impl Scene {
    pub fn from_config(config: DatasetConfig, base_seed: u64) -> Result<Self, SynthError> {
        config.validate()?;
        let model = Arc::new(make_sphere_model(
            config.sphere_radius,
            config.sphere_points,
            sub_seed(base_seed, seed_ns::MODEL, 0),
        )?);
        let keypoints = Arc::new(fps_select(
            &model,
            config.keypoints,
            centroid_seed(&model),
        )?);
        Ok(Scene {
            config,
            base_seed,
            intrinsics: default_camera(),
            model,
            keypoints,
        })
    }

    /// Builds an identically-configured scene around an existing model and
    /// keypoint selection (used when reloading persisted datasets).
    pub fn from_parts(
        config: DatasetConfig,
        base_seed: u64,
        intrinsics: CameraIntrinsics,
        model: Arc<MeshModel>,
        keypoints: Arc<KeypointSet>,
    ) -> Self {
        Scene {
            config,
            base_seed,
            intrinsics,
            model,
            keypoints,
        }
    }

    /// Deterministically generates sample `index` of the given split.
    pub fn generate_sample(&self, split: Split, index: u64) -> Result<SyntheticSample, SynthError> {
        let seed = sub_seed(self.base_seed, split.namespace(), index);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = &self.config;

        let sigma = rng.random_range(cfg.sigma_min..=cfg.sigma_max);
        let outlier_rate = rng.random_range(cfg.outlier_min..=cfg.outlier_max);
        let pose = sample_visible_pose(
            &mut rng,
            (cfg.z_min, cfg.z_max),
            &self.intrinsics,
            cfg.sphere_radius,
            VISIBILITY_MARGIN_PX,
        )?;
        self.realize_sample(pose, sigma, outlier_rate, &mut rng)
    }

    /// Generates a sample at a fixed noise/outlier level with the pose of
    /// split sample `index`; used by the benchmark sweep.
    pub fn generate_sample_at(
        &self,
        split: Split,
        index: u64,
        sigma: f64,
        outlier_rate: f64,
        noise_seed: u64,
    ) -> Result<SyntheticSample, SynthError> {
        let pose_seed = sub_seed(self.base_seed, split.namespace(), index);
        let mut pose_rng = ChaCha8Rng::seed_from_u64(pose_seed);
        let cfg = &self.config;
        // Consume the per-sample level draws so the pose matches generate_sample.
        let _ = pose_rng.random_range(cfg.sigma_min..=cfg.sigma_max);
        let _ = pose_rng.random_range(cfg.outlier_min..=cfg.outlier_max);
        let pose = sample_visible_pose(
            &mut pose_rng,
            (cfg.z_min, cfg.z_max),
            &self.intrinsics,
            cfg.sphere_radius,
            VISIBILITY_MARGIN_PX,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        self.realize_sample(pose, sigma, outlier_rate, &mut rng)
    }

    fn realize_sample<R: Rng>(
        &self,
        pose: Pose,
        sigma: f64,
        outlier_rate: f64,
        rng: &mut R,
    ) -> Result<SyntheticSample, SynthError> {
        let cfg = &self.config;
        let correspondences = generate_correspondences(
            &self.keypoints,
            &pose,
            &self.intrinsics,
            cfg.hypotheses,
            sigma,
            outlier_rate,
            cfg.sphere_radius,
            rng,
        )?;
        let depth_map = render_depth(
            &pose,
            &self.intrinsics,
            cfg.sphere_radius,
            cfg.depth_map_width,
            cfg.depth_map_height,
        )?;
        Ok(SyntheticSample {
            correspondences,
            gt_pose: pose,
            model: Arc::clone(&self.model),
            depth_map,
            sigma,
            outlier_rate,
        })
    }
}

/// Both splits of a generated dataset.
pub struct GeneratedDataset {
    pub scene: Scene,
    pub train: Vec<SyntheticSample>,
    pub test: Vec<SyntheticSample>,
}

/// Generates the full dataset in memory. Samples are produced in parallel;
/// the per-sample seeding makes the output identical to sequential
/// generation. Large configurations are better streamed through
/// [`Scene::generate_sample`] directly.
pub fn generate_dataset(config: DatasetConfig, rng_seed: u64) -> Result<GeneratedDataset, SynthError> {
    use rayon::prelude::*;
    let scene = Scene::from_config(config, rng_seed)?;
    let gen_split = |split: Split, size: usize| -> Result<Vec<SyntheticSample>, SynthError> {
        (0..size as u64)
            .into_par_iter()
            .map(|i| scene.generate_sample(split, i))
            .collect()
    };
    let train = gen_split(Split::Train, scene.config.train_size)?;
    let test = gen_split(Split::Test, scene.config.test_size)?;
    Ok(GeneratedDataset { scene, train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_config() -> DatasetConfig {
        DatasetConfig {
            train_size: 40,
            test_size: 10,
            sphere_points: 200,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn default_camera_matches_benchmark() {
        let cam = default_camera();
        assert_eq!(cam.width, 640);
        assert_eq!(cam.height, 480);
        assert_eq!(cam.focal_x, 800.0);
        assert_eq!(cam.focal_y, 800.0);
        assert_eq!((cam.principal_x, cam.principal_y), (320.0, 240.0));
    }

    #[test]
    fn sphere_vertices_on_surface() {
        let model = make_sphere_model(0.1, 200, 9).unwrap();
        for v in model.vertices() {
            assert_relative_eq!(v.coords.norm(), 0.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn sphere_diameter_near_two_radii() {
        let model = make_sphere_model(0.1, 500, 10).unwrap();
        let d = model.diameter().unwrap();
        assert!((d - 0.2).abs() < 0.004, "diameter {d}");
    }

    #[test]
    fn sphere_deterministic_per_seed() {
        let a = make_sphere_model(0.1, 100, 42).unwrap();
        let b = make_sphere_model(0.1, 100, 42).unwrap();
        assert_eq!(a, b);
        let c = make_sphere_model(0.1, 100, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sphere_rejects_bad_args() {
        assert!(matches!(
            make_sphere_model(0.0, 100, 1),
            Err(SynthError::InvalidRadius(_))
        ));
        assert!(matches!(
            make_sphere_model(0.1, 3, 1),
            Err(SynthError::TooFewVertices(3))
        ));
    }

    #[test]
    fn pose_rotation_uniformity_smoke() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let intr = default_camera();
        let mut mean = nalgebra::Matrix3::<f64>::zeros();
        let trials = 10_000;
        for _ in 0..trials {
            let pose = sample_pose(&mut rng, (0.5, 2.0), &intr).unwrap();
            mean += pose.rotation.matrix();
        }
        mean /= trials as f64;
        assert!(mean.abs().max() < 0.05, "rotation mean {mean}");
    }

    #[test]
    fn pose_z_in_range_and_center_visible() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let intr = default_camera();
        for _ in 0..500 {
            let pose = sample_pose(&mut rng, (0.5, 2.0), &intr).unwrap();
            assert!((0.5..=2.0).contains(&pose.translation.z));
            let center = intr
                .project(&Point3::from(pose.translation))
                .expect("center in front");
            assert!((64.0..=576.0).contains(&center.x));
            assert!((48.0..=432.0).contains(&center.y));
        }
    }

    #[test]
    fn visible_pose_keeps_projected_extent_in_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let intr = default_camera();
        let model = make_sphere_model(0.1, 300, 5).unwrap();
        for _ in 0..50 {
            let pose =
                sample_visible_pose(&mut rng, (0.5, 2.0), &intr, 0.1, VISIBILITY_MARGIN_PX)
                    .unwrap();
            for v in model.vertices() {
                let px = intr.project(&pose.transform_point(v)).unwrap();
                assert!(px.x >= VISIBILITY_MARGIN_PX && px.x <= 639.0 - VISIBILITY_MARGIN_PX);
                assert!(px.y >= VISIBILITY_MARGIN_PX && px.y <= 479.0 - VISIBILITY_MARGIN_PX);
            }
        }
    }

    #[test]
    fn gradient_background_values() {
        let intr = default_camera();
        assert_eq!(
            gradient_background_rgb(&Point2::new(0.0, 0.0), &intr),
            [0.0, 0.0, 0.5]
        );
        let c = gradient_background_rgb(&Point2::new(639.0, 479.0), &intr);
        assert_relative_eq!(c[0], 639.0 / 640.0, epsilon = 1e-15);
        assert_relative_eq!(c[1], 479.0 / 480.0, epsilon = 1e-15);
        assert_eq!(c[2], 0.5);
        assert_eq!(
            gradient_background_rgb(&Point2::new(17.0, 99.0), &intr),
            gradient_background_rgb(&Point2::new(17.0, 99.0), &intr)
        );
    }

    #[test]
    fn depth_on_axis_front_intersection() {
        let intr = default_camera();
        let pose = Pose::new(Rotation::identity(), nalgebra::Vector3::new(0.0, 0.0, 2.0));
        let map = render_depth(&pose, &intr, 0.5, 640, 480).unwrap();
        assert_relative_eq!(map.get(320, 240).unwrap(), 1.5, epsilon = 1e-12);
        // Corner ray misses the sphere.
        assert!(map.get(0, 0).is_none());
    }

    #[test]
    fn depth_rejects_sphere_behind_camera() {
        let intr = default_camera();
        let pose = Pose::new(Rotation::identity(), nalgebra::Vector3::new(0.0, 0.0, 0.3));
        assert!(matches!(
            render_depth(&pose, &intr, 0.5, 64, 48),
            Err(SynthError::SphereBehindCamera { .. })
        ));
    }

    #[test]
    fn depth_matches_ray_march_oracle() {
        let intr = default_camera();
        let pose = Pose::new(
            Rotation::from_axis_angle(&nalgebra::Vector3::y(), 0.4).unwrap(),
            nalgebra::Vector3::new(0.1, -0.05, 1.6),
        );
        let radius = 0.1;
        let map = render_depth(&pose, &intr, radius, 64, 48).unwrap();
        let center = pose.translation;
        for j in 0..48 {
            for i in 0..64 {
                let pixel = Point2::new(f64::from(i) * 10.0, f64::from(j) * 10.0);
                let dir = intr.pixel_ray(&pixel);
                // Brute-force march along the ray in z with bisection refinement.
                let steps = 10_000;
                let z_far = 3.0;
                let mut hit = None;
                let mut prev_inside = false;
                for s in 1..=steps {
                    let z = z_far * s as f64 / steps as f64;
                    let p = dir * z;
                    let inside = (p - center).norm() <= radius;
                    if inside && !prev_inside {
                        // Bisect between the last outside and first inside step.
                        let mut lo = z_far * (s - 1) as f64 / steps as f64;
                        let mut hi = z;
                        for _ in 0..60 {
                            let mid = 0.5 * (lo + hi);
                            if (dir * mid - center).norm() <= radius {
                                hi = mid;
                            } else {
                                lo = mid;
                            }
                        }
                        hit = Some(0.5 * (lo + hi));
                        break;
                    }
                    prev_inside = inside;
                }
                match (map.get(i, j), hit) {
                    (Some(d), Some(h)) => {
                        assert!((d - h).abs() < 1e-3, "pixel ({i},{j}): {d} vs {h}")
                    }
                    (None, None) => {}
                    // Grazing rays may disagree between the analytic and
                    // marched versions only within a hair of the silhouette.
                    (Some(d), None) => {
                        let p = dir * d;
                        assert!(
                            ((p - center).norm() - radius).abs() < 1e-6,
                            "analytic-only hit not on surface"
                        );
                    }
                    (None, Some(h)) => {
                        let p = dir * h;
                        assert!(((p - center).norm() - radius).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn noiseless_correspondences_are_exact_projections() {
        let scene = Scene::from_config(small_config(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = sample_visible_pose(
            &mut rng,
            (0.5, 2.0),
            &scene.intrinsics,
            0.1,
            VISIBILITY_MARGIN_PX,
        )
        .unwrap();
        let corrs = generate_correspondences(
            &scene.keypoints,
            &pose,
            &scene.intrinsics,
            10,
            0.0,
            0.0,
            0.1,
            &mut rng,
        )
        .unwrap();
        for (p3, corr) in corrs.flat() {
            let exact = scene.intrinsics.project(&pose.transform_point(&p3)).unwrap();
            assert!((exact - corr.pixel).norm() <= 1e-9);
            assert!(!corr.is_outlier_gt);
            assert!(scene.intrinsics.contains(&corr.pixel));
        }
    }

    #[test]
    fn outlier_count_is_rounded_fraction() {
        let scene = Scene::from_config(small_config(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pose = sample_visible_pose(
            &mut rng,
            (0.5, 2.0),
            &scene.intrinsics,
            0.1,
            VISIBILITY_MARGIN_PX,
        )
        .unwrap();
        // n=8, m=10 -> M=80; 30% -> exactly 24.
        let corrs = generate_correspondences(
            &scene.keypoints,
            &pose,
            &scene.intrinsics,
            10,
            2.0,
            0.30,
            0.1,
            &mut rng,
        )
        .unwrap();
        assert_eq!(corrs.total(), 80);
        let outliers = corrs.flat().filter(|(_, c)| c.is_outlier_gt).count();
        assert_eq!(outliers, 24);
        for (_, c) in corrs.flat() {
            assert!(scene.intrinsics.contains(&c.pixel));
        }
    }

    #[test]
    fn noise_variance_matches_sigma() {
        let scene = Scene::from_config(small_config(), 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sigma = 4.0;
        let mut count = 0usize;
        let mut sum = [0.0f64; 2];
        let mut sum_sq = [0.0f64; 2];
        while count < 50_000 {
            let pose = sample_visible_pose(
                &mut rng,
                (0.5, 2.0),
                &scene.intrinsics,
                0.1,
                VISIBILITY_MARGIN_PX,
            )
            .unwrap();
            let corrs = generate_correspondences(
                &scene.keypoints,
                &pose,
                &scene.intrinsics,
                10,
                sigma,
                0.0,
                0.1,
                &mut rng,
            )
            .unwrap();
            for (p3, corr) in corrs.flat() {
                let exact = scene.intrinsics.project(&pose.transform_point(&p3)).unwrap();
                let dx = corr.pixel.x - exact.x;
                let dy = corr.pixel.y - exact.y;
                sum[0] += dx;
                sum[1] += dy;
                sum_sq[0] += dx * dx;
                sum_sq[1] += dy * dy;
                count += 1;
            }
        }
        for axis in 0..2 {
            let mean = sum[axis] / count as f64;
            let var = sum_sq[axis] / count as f64 - mean * mean;
            assert!((var - sigma).abs() < 0.2, "axis {axis} variance {var}");
        }
    }

    #[test]
    fn invalid_sigma_and_rate_rejected() {
        let scene = Scene::from_config(small_config(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pose = sample_pose(&mut rng, (0.5, 2.0), &scene.intrinsics).unwrap();
        assert!(matches!(
            generate_correspondences(
                &scene.keypoints,
                &pose,
                &scene.intrinsics,
                10,
                16.0,
                0.0,
                0.1,
                &mut rng
            ),
            Err(SynthError::InvalidSigma(_))
        ));
        assert!(matches!(
            generate_correspondences(
                &scene.keypoints,
                &pose,
                &scene.intrinsics,
                10,
                1.0,
                1.0,
                0.1,
                &mut rng
            ),
            Err(SynthError::InvalidRate(_))
        ));
    }

    #[test]
    fn dataset_sizes_and_determinism() {
        let ds1 = generate_dataset(small_config(), 11).unwrap();
        let ds2 = generate_dataset(small_config(), 11).unwrap();
        assert_eq!(ds1.train.len(), 40);
        assert_eq!(ds1.test.len(), 10);
        for (a, b) in ds1.train.iter().zip(&ds2.train) {
            assert_eq!(a.gt_pose, b.gt_pose);
            assert_eq!(a.correspondences, b.correspondences);
            assert_eq!(a.depth_map, b.depth_map);
        }
    }

    #[test]
    fn train_and_test_seed_streams_disjoint() {
        let ds = generate_dataset(small_config(), 12).unwrap();
        // Exhaustive scan: no train pose appears in the test split.
        for tr in &ds.train {
            for te in &ds.test {
                assert_ne!(tr.gt_pose, te.gt_pose);
            }
        }
    }

    #[test]
    fn benchmark_cell_reuses_split_poses() {
        let scene = Scene::from_config(small_config(), 13).unwrap();
        let base = scene.generate_sample(Split::Test, 4).unwrap();
        let cell = scene
            .generate_sample_at(Split::Test, 4, 5.0, 0.10, 999)
            .unwrap();
        assert_eq!(base.gt_pose, cell.gt_pose);
        assert_eq!(cell.sigma, 5.0);
        assert_eq!(cell.outlier_rate, 0.10);
    }
}
