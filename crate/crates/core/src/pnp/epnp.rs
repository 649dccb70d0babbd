//! EPnP: pose from n ≥ 4 correspondences via a control-point
//! parameterization.
//!
//! Points are expressed as barycentric combinations of four control points
//! (the centroid plus the three principal axes; three control points in the
//! planar case). The camera-frame control points lie in the null space of a
//! 2n×12 system built from the normalized image observations. Up to three
//! null-space dimensions are kept; each case N ∈ {1,2,3} gets closed-form
//! β coefficients, a short Gauss–Newton polish on the inter-control-point
//! distance constraints, and an orthogonal Procrustes alignment. The case
//! with the lowest mean reprojection error wins.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::geometry::{CameraIntrinsics, Point2, Point3, Pose, Rotation};

use super::PnpError;

/// Relative eigenvalue threshold below which a principal axis is treated
/// as collapsed (planar or collinear point sets).
const RANK_EPS: f64 = 1e-10;
const GAUSS_NEWTON_ITERS: usize = 10;

pub fn epnp_solve(
    points3d: &[Point3],
    points2d: &[Point2],
    intr: &CameraIntrinsics,
) -> Result<Pose, PnpError> {
    let n = points3d.len();
    if points2d.len() != n {
        return Err(PnpError::LengthMismatch {
            points3d: n,
            points2d: points2d.len(),
        });
    }
    if n < 4 {
        return Err(PnpError::TooFewPoints { got: n, need: 4 });
    }

    // Normalized image coordinates.
    let obs: Vec<(f64, f64)> = points2d
        .iter()
        .map(|p| {
            (
                (p.x - intr.principal_x) / intr.focal_x,
                (p.y - intr.principal_y) / intr.focal_y,
            )
        })
        .collect();

    // PCA of the 3D points.
    let centroid = points3d
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.coords)
        / n as f64;
    let mut cov = Matrix3::zeros();
    for p in points3d {
        let d = p.coords - centroid;
        cov += d * d.transpose();
    }
    cov /= n as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let evals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let axes: Vec<Vector3<f64>> = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();

    if evals[0] <= 0.0 || evals[1] <= RANK_EPS * evals[0] {
        return Err(PnpError::DegenerateConfiguration(
            "3D points are collinear or coincident",
        ));
    }
    let planar = evals[2] <= RANK_EPS * evals[0];

    // Control points: centroid plus principal axes scaled to the point
    // spread.
    let mut control_w: Vec<Vector3<f64>> = vec![centroid];
    let axis_count = if planar { 2 } else { 3 };
    for k in 0..axis_count {
        control_w.push(centroid + axes[k] * evals[k].sqrt());
    }
    let nc = control_w.len();

    // Barycentric coordinates of every point in the control basis.
    let alphas = barycentric(points3d, &control_w, planar)?;

    // 2n × 3nc system from the projection constraints.
    let mut m = DMatrix::<f64>::zeros(2 * n, 3 * nc);
    for (i, (&(u, v), alpha)) in obs.iter().zip(&alphas).enumerate() {
        for (j, &a) in alpha.iter().enumerate() {
            m[(2 * i, 3 * j)] = a;
            m[(2 * i, 3 * j + 2)] = -u * a;
            m[(2 * i + 1, 3 * j + 1)] = a;
            m[(2 * i + 1, 3 * j + 2)] = -v * a;
        }
    }

    // Null-space basis: eigenvectors of MᵀM for the smallest eigenvalues.
    // Four vectors in the general case (the minimal n=4 system has a
    // 4-dimensional null space), three in the planar case where only three
    // distance constraints are available to pin β down.
    let mtm = m.transpose() * &m;
    let eig = mtm.symmetric_eigen();
    let dim = 3 * nc;
    let basis_len = if planar { 3 } else { 4 };
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let basis: Vec<DVector<f64>> = order
        .iter()
        .take(basis_len.min(dim))
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();

    // Distance constraints between world control points.
    let pairs: Vec<(usize, usize)> = (0..nc)
        .flat_map(|a| ((a + 1)..nc).map(move |b| (a, b)))
        .collect();
    let rho: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| (control_w[a] - control_w[b]).norm_squared())
        .collect();
    // dv[k][p] = difference of control-point blocks of basis vector k.
    let dv: Vec<Vec<Vector3<f64>>> = basis
        .iter()
        .map(|v| {
            pairs
                .iter()
                .map(|&(a, b)| block3(v, a) - block3(v, b))
                .collect()
        })
        .collect();

    let mut best: Option<(f64, Pose)> = None;
    for case in 1..=3 {
        let Some(mut betas) = initial_betas(case, basis.len(), &dv, &rho) else {
            continue;
        };
        gauss_newton(&mut betas, &dv, &rho);
        if let Some((err, pose)) =
            candidate_pose(&betas, &basis, &alphas, points3d, points2d, intr, nc)
        {
            if best.as_ref().is_none_or(|(e, _)| err < *e) {
                best = Some((err, pose));
            }
        }
    }

    best.map(|(_, pose)| pose)
        .ok_or(PnpError::DegenerateConfiguration(
            "no β case produced a valid pose",
        ))
}

fn block3(v: &DVector<f64>, j: usize) -> Vector3<f64> {
    Vector3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2])
}

/// Barycentric coordinates in the control-point basis. For the planar case
/// the 3×2 basis is solved through its normal equations, which is exact for
/// in-plane points.
fn barycentric(
    points: &[Point3],
    control_w: &[Vector3<f64>],
    planar: bool,
) -> Result<Vec<Vec<f64>>, PnpError> {
    let c0 = control_w[0];
    if planar {
        let a1 = control_w[1] - c0;
        let a2 = control_w[2] - c0;
        let g = nalgebra::Matrix2::new(a1.dot(&a1), a1.dot(&a2), a2.dot(&a1), a2.dot(&a2));
        let g_inv = g
            .try_inverse()
            .ok_or(PnpError::DegenerateConfiguration("planar basis singular"))?;
        Ok(points
            .iter()
            .map(|p| {
                let d = p.coords - c0;
                let coef = g_inv * nalgebra::Vector2::new(a1.dot(&d), a2.dot(&d));
                vec![1.0 - coef.x - coef.y, coef.x, coef.y]
            })
            .collect())
    } else {
        let basis = Matrix3::from_columns(&[
            control_w[1] - c0,
            control_w[2] - c0,
            control_w[3] - c0,
        ]);
        let inv = basis
            .try_inverse()
            .ok_or(PnpError::DegenerateConfiguration("control basis singular"))?;
        Ok(points
            .iter()
            .map(|p| {
                let coef = inv * (p.coords - c0);
                vec![1.0 - coef.x - coef.y - coef.z, coef.x, coef.y, coef.z]
            })
            .collect())
    }
}

/// Closed-form β initialization. The three cases are the standard EPnP
/// linearizations of the quadratic distance constraints, assuming the true
/// combination is dominated by 1, 2, or 3 of the null-space vectors; the
/// returned vector is zero-padded to the basis length and refined jointly
/// by [`gauss_newton`].
fn initial_betas(
    case: usize,
    basis_len: usize,
    dv: &[Vec<Vector3<f64>>],
    rho: &[f64],
) -> Option<Vec<f64>> {
    let pairs = rho.len();
    let mut betas = match case {
        1 => {
            // Unknowns (β1², β1β2, β1β3, β1β4...): everything scaled by β1.
            let mut l = DMatrix::<f64>::zeros(pairs, basis_len);
            for p in 0..pairs {
                l[(p, 0)] = dv[0][p].norm_squared();
                for k in 1..basis_len {
                    l[(p, k)] = 2.0 * dv[0][p].dot(&dv[k][p]);
                }
            }
            let b = lsq(&l, rho)?;
            let beta1 = b[0].abs().sqrt();
            if beta1 == 0.0 {
                return None;
            }
            let sign = if b[0] < 0.0 { -1.0 } else { 1.0 };
            let mut betas = vec![beta1];
            betas.extend((1..basis_len).map(|k| sign * b[k] / beta1));
            betas
        }
        2 => {
            // Unknowns (β11, β12, β22); magnitudes from the squares, the
            // relative sign from β12.
            let mut l = DMatrix::<f64>::zeros(pairs, 3);
            for p in 0..pairs {
                l[(p, 0)] = dv[0][p].norm_squared();
                l[(p, 1)] = 2.0 * dv[0][p].dot(&dv[1][p]);
                l[(p, 2)] = dv[1][p].norm_squared();
            }
            let b = lsq(&l, rho)?;
            let (mut beta1, beta2) = if b[0] < 0.0 {
                (
                    (-b[0]).sqrt(),
                    if b[2] < 0.0 { (-b[2]).sqrt() } else { 0.0 },
                )
            } else {
                (b[0].sqrt(), if b[2] > 0.0 { b[2].sqrt() } else { 0.0 })
            };
            if b[1] < 0.0 {
                beta1 = -beta1;
            }
            vec![beta1, beta2]
        }
        3 => {
            // Unknowns (β11, β12, β22, β13, β23); the remaining quadratic
            // terms are left to the Gauss–Newton polish.
            if basis_len < 3 {
                return None;
            }
            let mut l = DMatrix::<f64>::zeros(pairs, 5);
            for p in 0..pairs {
                l[(p, 0)] = dv[0][p].norm_squared();
                l[(p, 1)] = 2.0 * dv[0][p].dot(&dv[1][p]);
                l[(p, 2)] = dv[1][p].norm_squared();
                l[(p, 3)] = 2.0 * dv[0][p].dot(&dv[2][p]);
                l[(p, 4)] = 2.0 * dv[1][p].dot(&dv[2][p]);
            }
            let b = lsq(&l, rho)?;
            let (mut beta1, beta2) = if b[0] < 0.0 {
                (
                    (-b[0]).sqrt(),
                    if b[2] < 0.0 { (-b[2]).sqrt() } else { 0.0 },
                )
            } else {
                (b[0].sqrt(), if b[2] > 0.0 { b[2].sqrt() } else { 0.0 })
            };
            if b[1] < 0.0 {
                beta1 = -beta1;
            }
            if beta1 == 0.0 {
                return None;
            }
            vec![beta1, beta2, b[3] / beta1]
        }
        _ => return None,
    };
    if !betas.iter().all(|b| b.is_finite()) {
        return None;
    }
    betas.resize(basis_len, 0.0);
    Some(betas)
}

fn lsq(l: &DMatrix<f64>, rho: &[f64]) -> Option<Vec<f64>> {
    let rhs = DVector::from_column_slice(rho);
    let svd = l.clone().svd(true, true);
    svd.solve(&rhs, 1e-12).ok().map(|v| v.iter().copied().collect())
}

/// Minimizes Σ_p (‖Σ_k β_k dv_k[p]‖² − ρ_p)² over β.
fn gauss_newton(betas: &mut [f64], dv: &[Vec<Vector3<f64>>], rho: &[f64]) {
    let n = betas.len();
    let pairs = rho.len();
    for _ in 0..GAUSS_NEWTON_ITERS {
        let mut jtj = DMatrix::<f64>::zeros(n, n);
        let mut jtr = DVector::<f64>::zeros(n);
        for p in 0..pairs {
            let x: Vector3<f64> = (0..n).map(|k| dv[k][p] * betas[k]).sum();
            let r = x.norm_squared() - rho[p];
            let grad: Vec<f64> = (0..n).map(|k| 2.0 * x.dot(&dv[k][p])).collect();
            for a in 0..n {
                for b in 0..n {
                    jtj[(a, b)] += grad[a] * grad[b];
                }
                jtr[a] += grad[a] * r;
            }
        }
        let Some(delta) = jtj.lu().solve(&jtr) else {
            return;
        };
        for k in 0..n {
            betas[k] -= delta[k];
        }
    }
}

/// Realizes a candidate: camera-frame control points from β, the point
/// cloud from the barycentric weights, a cheirality sign fix, Procrustes
/// alignment, and reprojection scoring.
fn candidate_pose(
    betas: &[f64],
    basis: &[DVector<f64>],
    alphas: &[Vec<f64>],
    points3d: &[Point3],
    points2d: &[Point2],
    intr: &CameraIntrinsics,
    nc: usize,
) -> Option<(f64, Pose)> {
    let dim = 3 * nc;
    let mut x = DVector::<f64>::zeros(dim);
    for (k, beta) in betas.iter().enumerate() {
        x += &basis[k] * *beta;
    }
    let control_c: Vec<Vector3<f64>> = (0..nc).map(|j| block3(&x, j)).collect();

    let mut cam_pts: Vec<Vector3<f64>> = alphas
        .iter()
        .map(|a| {
            a.iter()
                .zip(&control_c)
                .map(|(&w, c)| c * w)
                .sum::<Vector3<f64>>()
        })
        .collect();
    // The null-space scale sign is arbitrary; pick the one putting the
    // cloud in front of the camera.
    let z_sum: f64 = cam_pts.iter().map(|p| p.z).sum();
    if z_sum < 0.0 {
        for p in &mut cam_pts {
            *p = -*p;
        }
    }

    let pose = procrustes(points3d, &cam_pts)?;
    let mut err = 0.0;
    for (p3, p2) in points3d.iter().zip(points2d) {
        match intr.project(&pose.transform_point(p3)) {
            Ok(proj) => err += (proj - p2).norm(),
            Err(_) => return Some((f64::INFINITY, pose)),
        }
    }
    Some((err / points3d.len() as f64, pose))
}

/// Rigid alignment world → camera with reflection correction.
fn procrustes(world: &[Point3], cam: &[Vector3<f64>]) -> Option<Pose> {
    let n = world.len() as f64;
    let cw = world.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cc = cam.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (pw, pc) in world.iter().zip(cam) {
        h += (pc - cc) * (pw.coords - cw).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fix = u;
        u_fix.column_mut(2).neg_mut();
        r = u_fix * v_t;
    }
    // Re-orthonormalize to keep the rotation invariant tight.
    let r = orthonormalize(r);
    let t = cc - r * cw;
    Some(Pose::new(Rotation::from_matrix_unchecked(r), t))
}

/// One Gram–Schmidt pass over the columns; SVD products can drift a few
/// ulps beyond the rotation tolerance.
fn orthonormalize(m: Matrix3<f64>) -> Matrix3<f64> {
    let c1 = m.column(0).normalize();
    let mut c2: Vector3<f64> = m.column(1).into();
    c2 -= c1 * c1.dot(&c2);
    let c2 = c2.normalize();
    let c3 = c1.cross(&c2);
    Matrix3::from_columns(&[c1, c2, c3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{default_camera, random_rotation};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_scene(
        rng: &mut ChaCha8Rng,
        n: usize,
    ) -> (Vec<Point3>, Vec<Point2>, Pose, CameraIntrinsics) {
        let intr = default_camera();
        let pose = Pose::new(
            random_rotation(rng),
            Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.2..0.2),
                rng.random_range(1.0..2.5),
            ),
        );
        let mut p3 = Vec::with_capacity(n);
        let mut p2 = Vec::with_capacity(n);
        while p3.len() < n {
            let p = Point3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
            );
            let cam = pose.transform_point(&p);
            if let Ok(px) = intr.project(&cam) {
                if intr.contains(&px) {
                    p3.push(p);
                    p2.push(px);
                }
            }
        }
        (p3, p2, pose, intr)
    }

    #[test]
    fn exact_recovery_from_noiseless_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..50 {
            let (p3, p2, gt, intr) = random_scene(&mut rng, 8);
            let est = epnp_solve(&p3, &p2, &intr).unwrap();
            assert!(
                est.rotation.angle_to(&gt.rotation) < 1e-6,
                "rotation error {}",
                est.rotation.angle_to(&gt.rotation)
            );
            assert!((est.translation - gt.translation).norm() < 1e-6);
        }
    }

    #[test]
    fn planar_points_recover_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let intr = default_camera();
        for _ in 0..20 {
            let pose = Pose::new(
                random_rotation(&mut rng),
                Vector3::new(0.05, -0.05, rng.random_range(1.0..2.0)),
            );
            let mut p3 = Vec::new();
            let mut p2 = Vec::new();
            for _ in 0..12 {
                let p = Point3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    0.0,
                );
                p3.push(p);
                p2.push(intr.project(&pose.transform_point(&p)).unwrap());
            }
            let est = epnp_solve(&p3, &p2, &intr).unwrap();
            let mut err = 0.0;
            for (a, b) in p3.iter().zip(&p2) {
                err += (intr.project(&est.transform_point(a)).unwrap() - b).norm();
            }
            assert!(err / 12.0 < 1e-6, "planar reprojection error {}", err / 12.0);
        }
    }

    #[test]
    fn collinear_points_rejected() {
        let intr = default_camera();
        let p3: Vec<Point3> = (0..6)
            .map(|i| Point3::new(0.01 * i as f64, 0.02 * i as f64, 0.015 * i as f64))
            .collect();
        let pose = Pose::new(Rotation::identity(), Vector3::new(0.0, 0.0, 1.5));
        let p2: Vec<Point2> = p3
            .iter()
            .map(|p| intr.project(&pose.transform_point(p)).unwrap())
            .collect();
        assert!(matches!(
            epnp_solve(&p3, &p2, &intr),
            Err(PnpError::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn too_few_points_rejected() {
        let intr = default_camera();
        let p3 = vec![Point3::origin(); 3];
        let p2 = vec![Point2::origin(); 3];
        assert!(matches!(
            epnp_solve(&p3, &p2, &intr),
            Err(PnpError::TooFewPoints { got: 3, need: 4 })
        ));
    }

    #[test]
    fn output_rotation_is_rigid() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let (p3, p2, _, intr) = random_scene(&mut rng, 10);
        let est = epnp_solve(&p3, &p2, &intr).unwrap();
        // Validating constructor accepts it.
        assert!(Rotation::from_matrix(*est.rotation.matrix()).is_ok());
    }

    #[test]
    fn invariant_to_correspondence_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let (mut p3, mut p2, _, intr) = random_scene(&mut rng, 12);
        // Add pixel noise so the problem is not exactly solvable.
        for p in &mut p2 {
            p.x += rng.random_range(-1.0..1.0);
            p.y += rng.random_range(-1.0..1.0);
        }
        let reproj = |pose: &Pose, p3: &[Point3], p2: &[Point2]| {
            p3.iter()
                .zip(p2)
                .map(|(a, b)| {
                    (intr.project(&pose.transform_point(a)).unwrap() - b).norm()
                })
                .sum::<f64>()
                / p3.len() as f64
        };
        let e1 = reproj(&epnp_solve(&p3, &p2, &intr).unwrap(), &p3, &p2);
        // Deterministic shuffle.
        for i in (1..p3.len()).rev() {
            let j = rng.random_range(0..=i);
            p3.swap(i, j);
            p2.swap(i, j);
        }
        let e2 = reproj(&epnp_solve(&p3, &p2, &intr).unwrap(), &p3, &p2);
        assert!((e1 - e2).abs() < 1e-8, "order dependence: {e1} vs {e2}");
    }

    #[test]
    fn beats_randomized_local_refinement_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let (p3, mut p2, gt, intr) = random_scene(&mut rng, 20);
        let noise = rand_distr::Normal::new(0.0, 1.0).unwrap();
        for p in &mut p2 {
            p.x += rand_distr::Distribution::sample(&noise, &mut rng);
            p.y += rand_distr::Distribution::sample(&noise, &mut rng);
        }
        let mean_reproj = |pose: &Pose| -> f64 {
            let mut err = 0.0;
            for (a, b) in p3.iter().zip(&p2) {
                match intr.project(&pose.transform_point(a)) {
                    Ok(px) => err += (px - b).norm(),
                    Err(_) => return f64::INFINITY,
                }
            }
            err / p3.len() as f64
        };

        let est = epnp_solve(&p3, &p2, &intr).unwrap();
        let epnp_err = mean_reproj(&est);

        // Oracle: 5000 random pose restarts, each polished by perturbation
        // hill-climbing with a decaying step.
        let mut oracle_err = f64::INFINITY;
        for _ in 0..5000 {
            let mut pose = Pose::new(
                random_rotation(&mut rng),
                Vector3::new(
                    rng.random_range(-0.4..0.4),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(0.8..3.0),
                ),
            );
            let mut err = mean_reproj(&pose);
            for step in 0..60 {
                let scale = 0.3 * 0.9f64.powi(step);
                let axis = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let cand = Pose::new(
                    Rotation::from_axis_angle(&axis, scale * rng.random_range(0.0..1.0))
                        .unwrap()
                        .compose(&pose.rotation),
                    pose.translation
                        + Vector3::new(
                            rng.random_range(-scale..scale) * 0.3,
                            rng.random_range(-scale..scale) * 0.3,
                            rng.random_range(-scale..scale) * 0.3,
                        ),
                );
                let cand_err = mean_reproj(&cand);
                if cand_err < err {
                    err = cand_err;
                    pose = cand;
                }
            }
            oracle_err = oracle_err.min(err);
        }

        assert!(
            epnp_err <= oracle_err,
            "epnp {epnp_err:.6} px vs oracle {oracle_err:.6} px"
        );
        // Sanity: the estimate explains the data about as well as the truth.
        assert!(epnp_err <= mean_reproj(&gt) * 1.5 + 1e-9);
    }
}
