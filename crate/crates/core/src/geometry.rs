//! Rigid-body poses, rotations, camera intrinsics, and the pinhole
//! projection/back-projection pair.
//!
//! Conventions: the camera looks down +z, the image origin is the top-left
//! corner, and y grows downward. All arithmetic is `f64`.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// 3D point in meters.
pub type Point3 = nalgebra::Point3<f64>;
/// 2D image point in pixels.
pub type Point2 = nalgebra::Point2<f64>;

/// Orthonormality / determinant tolerance for accepting a rotation matrix.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (z = {z})")]
    PointBehindCamera { z: f64 },
    #[error("invalid depth {depth}; depth must be finite and > 0")]
    InvalidDepth { depth: f64 },
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("matrix is not a rotation (orthonormality/determinant off by {defect:.3e})")]
    NotARotation { defect: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

/// Element of SO(3), stored as a 3×3 matrix.
///
/// Construction validates orthonormality (`RᵀR = I`) and `det R = +1` to
/// [`ROTATION_TOL`], so a `Rotation` value is always usable without further
/// checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates and wraps a raw matrix.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let defect = rotation_defect(&m);
        if defect > ROTATION_TOL {
            return Err(GeometryError::NotARotation { defect });
        }
        Ok(Rotation(m))
    }

    /// Wraps a matrix that is known-orthonormal by construction
    /// (Gram–Schmidt outputs, Procrustes results, quaternion conversions).
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        debug_assert!(rotation_defect(&m) < 1e-7, "unchecked rotation is invalid");
        Rotation(m)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self, GeometryError> {
        let n = axis.norm();
        if n < 1e-12 || !n.is_finite() {
            return Err(GeometryError::DegenerateInput("zero-length rotation axis"));
        }
        let m = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(*axis),
            angle,
        );
        Ok(Rotation(*m.matrix()))
    }

    /// Conversion from a unit quaternion (w, x, y, z); used by uniform
    /// rotation sampling.
    pub fn from_unit_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        Rotation(*q.to_rotation_matrix().matrix())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.0 * p
    }

    /// Geodesic distance to `other` on SO(3), in radians.
    ///
    /// `arccos((trace(selfᵀ·other) − 1) / 2)` with the argument clamped to
    /// [−1, 1]; the result lies in [0, π].
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        let trace = (self.0.transpose() * other.0).trace();
        (((trace - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
    }
}

fn rotation_defect(m: &Matrix3<f64>) -> f64 {
    if m.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
    let det = (m.determinant() - 1.0).abs();
    ortho.max(det)
}

/// Continuous 6D rotation parameterization: the first two matrix columns
/// before orthonormalization. Decoding is scale-invariant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation6D {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
}

impl Rotation6D {
    pub fn new(a: Vector3<f64>, b: Vector3<f64>) -> Self {
        Rotation6D { a, b }
    }

    /// Encoding of an existing rotation: its first two columns.
    pub fn from_rotation(r: &Rotation) -> Self {
        Rotation6D {
            a: r.matrix().column(0).into(),
            b: r.matrix().column(1).into(),
        }
    }

    /// Gram–Schmidt decode: columns 1–2 from the two vectors, column 3 from
    /// their cross product.
    pub fn to_rotation(&self) -> Result<Rotation, GeometryError> {
        let na = self.a.norm();
        if na < 1e-12 || !na.is_finite() {
            return Err(GeometryError::DegenerateInput("first 6D vector near zero"));
        }
        let nb = self.b.norm();
        if nb < 1e-12 || !nb.is_finite() {
            return Err(GeometryError::DegenerateInput("second 6D vector near zero"));
        }
        // sin of the angle between the two vectors; reject below 1e-6 rad.
        let sin_angle = self.a.cross(&self.b).norm() / (na * nb);
        if sin_angle <= 1e-6 {
            return Err(GeometryError::DegenerateInput("6D vectors are parallel"));
        }
        let c1 = self.a / na;
        let u2 = self.b - c1.dot(&self.b) * c1;
        let c2 = u2 / u2.norm();
        let c3 = c1.cross(&c2);
        Ok(Rotation::from_matrix_unchecked(Matrix3::from_columns(&[
            c1, c2, c3,
        ])))
    }
}

/// Rigid transform from the object frame into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Pose::new(Rotation::identity(), Vector3::zeros())
    }

    /// `R·p + t`.
    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation.apply(&p.coords) + self.translation)
    }

    /// Composition: `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation.compose(&other.rotation),
            self.rotation.apply(&other.translation) + self.translation,
        )
    }
}

/// Pinhole camera intrinsics. Focal lengths and principal point in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub focal_x: f64,
    pub focal_y: f64,
    pub principal_x: f64,
    pub principal_y: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        focal_x: f64,
        focal_y: f64,
        principal_x: f64,
        principal_y: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if !(focal_x > 0.0 && focal_y > 0.0) || !focal_x.is_finite() || !focal_y.is_finite() {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be > 0"));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics("image size must be > 0"));
        }
        if !principal_x.is_finite() || !principal_y.is_finite() {
            return Err(GeometryError::InvalidIntrinsics("principal point must be finite"));
        }
        Ok(CameraIntrinsics {
            focal_x,
            focal_y,
            principal_x,
            principal_y,
            width,
            height,
        })
    }

    /// Perspective projection of a camera-frame point onto the image plane.
    pub fn project(&self, p_cam: &Point3) -> Result<Point2, GeometryError> {
        if p_cam.z <= 1e-9 || !p_cam.z.is_finite() {
            return Err(GeometryError::PointBehindCamera { z: p_cam.z });
        }
        Ok(Point2::new(
            self.focal_x * p_cam.x / p_cam.z + self.principal_x,
            self.focal_y * p_cam.y / p_cam.z + self.principal_y,
        ))
    }

    /// Lifts a pixel with known depth (camera-frame z) back to 3D.
    pub fn backproject(&self, pixel: &Point2, depth: f64) -> Result<Point3, GeometryError> {
        if depth <= 0.0 || !depth.is_finite() {
            return Err(GeometryError::InvalidDepth { depth });
        }
        Ok(Point3::new(
            (pixel.x - self.principal_x) * depth / self.focal_x,
            (pixel.y - self.principal_y) * depth / self.focal_y,
            depth,
        ))
    }

    /// Unit-free ray direction through a pixel, with z = 1.
    pub fn pixel_ray(&self, pixel: &Point2) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.principal_x) / self.focal_x,
            (pixel.y - self.principal_y) / self.focal_y,
            1.0,
        )
    }

    pub fn contains(&self, pixel: &Point2) -> bool {
        pixel.x >= 0.0
            && pixel.x < f64::from(self.width)
            && pixel.y >= 0.0
            && pixel.y < f64::from(self.height)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rot_z(angle: f64) -> Rotation {
        Rotation::from_axis_angle(&Vector3::z(), angle).unwrap()
    }

    fn random_rotation(rng: &mut StdRng) -> Rotation {
        // Shoemake's uniform quaternion construction.
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let u3: f64 = rng.random();
        let tau = std::f64::consts::TAU;
        Rotation::from_unit_quaternion(
            (u1).sqrt() * (tau * u3).cos(),
            (1.0 - u1).sqrt() * (tau * u2).sin(),
            (1.0 - u1).sqrt() * (tau * u2).cos(),
            (u1).sqrt() * (tau * u3).sin(),
        )
    }

    fn test_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn transform_point_identity() {
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(Pose::identity().transform_point(&p), p);
    }

    #[test]
    fn transform_point_pure_translation() {
        let pose = Pose::new(Rotation::identity(), Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(
            pose.transform_point(&Point3::origin()),
            Point3::new(0.0, 0.0, 1.0)
        );
    }

    #[test]
    fn transform_point_axis_rotation() {
        let pose = Pose::new(rot_z(std::f64::consts::FRAC_PI_2), Vector3::zeros());
        let q = pose.transform_point(&Point3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(q.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(q.y, 1.0, epsilon = 1e-12);
        assert_relative_eq!(q.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn project_on_optical_axis() {
        let intr = test_intrinsics();
        let px = intr.project(&Point3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(px, Point2::new(320.0, 240.0));
    }

    #[test]
    fn project_off_axis() {
        let intr = test_intrinsics();
        let px = intr.project(&Point3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!(px, Point2::new(720.0, 240.0));
    }

    #[test]
    fn project_behind_camera_fails() {
        let intr = test_intrinsics();
        assert!(matches!(
            intr.project(&Point3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::PointBehindCamera { .. })
        ));
    }

    #[test]
    fn backproject_principal_point() {
        let intr = test_intrinsics();
        let p = intr.backproject(&Point2::new(320.0, 240.0), 2.0).unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn backproject_inverts_projection_example() {
        let intr = test_intrinsics();
        let p = intr.backproject(&Point2::new(720.0, 240.0), 2.0).unwrap();
        assert_relative_eq!(p.x, 1.0, epsilon = 1e-12);
        assert_eq!(p.z, 2.0);
    }

    #[test]
    fn backproject_rejects_bad_depth() {
        let intr = test_intrinsics();
        for depth in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(intr.backproject(&Point2::new(1.0, 1.0), depth).is_err());
        }
    }

    #[test]
    fn backproject_project_roundtrip() {
        let intr = test_intrinsics();
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..100 {
            let p = Point3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..10.0),
            );
            let px = intr.project(&p).unwrap();
            let q = intr.backproject(&px, p.z).unwrap();
            assert_relative_eq!((q - p).norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn rotation_6d_canonical_basis() {
        let v = Rotation6D::new(Vector3::x(), Vector3::y());
        let r = v.to_rotation().unwrap();
        assert_relative_eq!(
            (r.matrix() - Matrix3::identity()).abs().max(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn rotation_6d_scale_invariant() {
        let v = Rotation6D::new(Vector3::x() * 2.0, Vector3::y() * 3.0);
        let r = v.to_rotation().unwrap();
        assert_relative_eq!(
            (r.matrix() - Matrix3::identity()).abs().max(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn rotation_6d_parallel_fails() {
        let v = Rotation6D::new(Vector3::x(), Vector3::x());
        assert!(matches!(
            v.to_rotation(),
            Err(GeometryError::DegenerateInput(_))
        ));
    }

    #[test]
    fn rotation_6d_roundtrip_on_so3() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let back = Rotation6D::from_rotation(&r).to_rotation().unwrap();
            assert!((back.matrix() - r.matrix()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn geodesic_angle_identity_and_quarter_turn() {
        let r = rot_z(0.7);
        assert_eq!(r.angle_to(&r), 0.0);
        let quarter = rot_z(std::f64::consts::FRAC_PI_2);
        assert_relative_eq!(
            Rotation::identity().angle_to(&quarter),
            std::f64::consts::FRAC_PI_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn geodesic_angle_symmetric() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..50 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            assert_relative_eq!(a.angle_to(&b), b.angle_to(&a), epsilon = 1e-12);
        }
    }

    #[test]
    fn geodesic_angle_triangle_inequality() {
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..200 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            let c = random_rotation(&mut rng);
            assert!(a.angle_to(&c) <= a.angle_to(&b) + b.angle_to(&c) + 1e-8);
        }
    }

    #[test]
    fn rotation_closure_under_composition() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            let c = a.compose(&b);
            assert!(rotation_defect(c.matrix()) < 1e-8);
        }
    }

    #[test]
    fn from_matrix_rejects_non_rotation() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = 1.1;
        assert!(Rotation::from_matrix(m).is_err());
        assert!(Rotation::from_matrix(Matrix3::identity() * -1.0).is_err());
    }
}
