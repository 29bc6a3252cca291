//! Absolute pose from 2D-3D correspondences: P3P minimal solves inside a
//! seeded RANSAC loop, followed by Levenberg-Marquardt refinement on the
//! winning inlier set.
//!
//! The minimal solver is the classical three-point formulation (Grunert's
//! quartic in the depth ratios, solved via the companion matrix and polished
//! with Newton steps), with the rigid transform recovered by orthogonal
//! Procrustes. Every candidate is checked by reprojecting the minimal sample
//! before it is allowed to compete.

use nalgebra::{DMatrix, Matrix2x3, Matrix3, Matrix6, SMatrix, Vector2, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{project, Camera, Pose, Quaternion, MIN_DEPTH};
use crate::ids::{ImageId, PointId};

/// A 2D observation in the query image paired with a 3D scene point.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence2D3D {
    /// Observation in the query image (pixels).
    pub pixel: Vector2<f64>,
    pub point_id: PointId,
    /// 3D point in the world frame (meters).
    pub point: Vector3<f64>,
    /// Reference image the match came from.
    pub source_image: ImageId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Inlier gate on reprojection error (pixels).
    pub reprojection_threshold: f64,
    /// Target probability of having drawn at least one all-inlier sample.
    pub confidence: f64,
    /// Minimum inlier support for a pose to count as a success.
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            max_iterations: 10_000,
            reprojection_threshold: 12.0,
            confidence: 0.9999,
            min_inliers: 12,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations < 1 {
            return Err("max_iterations must be at least 1".into());
        }
        if !(self.reprojection_threshold.is_finite() && self.reprojection_threshold > 0.0) {
            return Err(format!(
                "reprojection_threshold must be positive, got {}",
                self.reprojection_threshold
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(format!("confidence must lie in (0, 1), got {}", self.confidence));
        }
        if self.min_inliers < 4 {
            return Err("min_inliers must be at least 4".into());
        }
        Ok(())
    }
}

/// Successful robust estimate. Every index in `inlier_indices` reprojects
/// within the configured threshold under `pose`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose,
    pub inlier_indices: Vec<usize>,
    pub iterations_used: usize,
    /// Mean reprojection error over the inlier set (pixels).
    pub mean_reprojection_error: f64,
    /// False when refinement hit its iteration cap (or was rejected for
    /// losing inlier support); the returned pose is still the best iterate.
    pub refinement_converged: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpFailure {
    #[error("insufficient correspondences: {found} < 4")]
    InsufficientCorrespondences { found: usize },
    #[error("degenerate geometry: every sampled minimal set was degenerate")]
    DegenerateGeometry,
    #[error("insufficient inliers: best model has {found}, needs {required}")]
    InsufficientInliers { found: usize, required: usize },
    #[error("invalid RANSAC config: {0}")]
    InvalidConfig(String),
}

/// Unit bearing vector of a pixel observation.
fn bearing(camera: &Camera, pixel: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new(
        (pixel.x - camera.cx) / camera.fx,
        (pixel.y - camera.cy) / camera.fy,
        1.0,
    )
    .normalize()
}

fn eval_poly(coeffs_desc: &[f64], x: f64) -> (f64, f64) {
    let mut f = 0.0;
    let mut df = 0.0;
    for &c in coeffs_desc {
        df = df * x + f;
        f = f * x + c;
    }
    (f, df)
}

/// Real roots of a polynomial of degree <= 4 (coefficients highest-first),
/// via companion-matrix eigenvalues plus Newton polishing.
fn real_poly_roots(coeffs: &[f64]) -> Vec<f64> {
    let max_mag = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if max_mag == 0.0 || !max_mag.is_finite() {
        return Vec::new();
    }
    let scaled: Vec<f64> = coeffs.iter().map(|c| c / max_mag).collect();
    let mut start = 0;
    while start + 1 < scaled.len() && scaled[start].abs() < 1e-12 {
        start += 1;
    }
    let cs = &scaled[start..];
    let degree = cs.len() - 1;
    if degree == 0 {
        return Vec::new();
    }
    if degree == 1 {
        return vec![-cs[1] / cs[0]];
    }

    let mut monic = vec![1.0];
    monic.extend(cs[1..].iter().map(|c| c / cs[0]));

    let mut companion = DMatrix::<f64>::zeros(degree, degree);
    for i in 1..degree {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..degree {
        // column of -c_i where c_i is the coefficient of x^i
        companion[(i, degree - 1)] = -monic[degree - i];
    }

    let eigen = companion.complex_eigenvalues();
    let mut roots = Vec::with_capacity(degree);
    for e in eigen.iter() {
        if e.im.abs() > 1e-6 * (1.0 + e.re.abs()) {
            continue;
        }
        let mut r = e.re;
        for _ in 0..3 {
            let (f, df) = eval_poly(&monic, r);
            if df.abs() > 1e-300 {
                r -= f / df;
            }
        }
        let (residual, _) = eval_poly(&monic, r);
        let scale = (1.0 + r.abs()).powi(degree as i32);
        if residual.abs() <= 1e-6 * scale {
            roots.push(r);
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9 * (1.0 + b.abs()));
    roots
}

/// Least-squares rigid transform mapping `world` onto `cam`
/// (`cam_i = R · world_i + t`), with the reflection case repaired.
fn rigid_from_three(world: &[Vector3<f64>; 3], cam: &[Vector3<f64>; 3]) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let wc = (world[0] + world[1] + world[2]) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    let mut h = Matrix3::zeros();
    for i in 0..3 {
        h += (world[i] - wc) * (cam[i] - cc).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut v = v_t.transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        v.column_mut(2).neg_mut();
        r = v * u.transpose();
    }
    let t = cc - r * wc;
    Some((r, t))
}

/// Internal gate: a P3P candidate must reproject its own minimal sample this
/// tightly (well below any useful RANSAC threshold, far above solver noise).
const P3P_SAMPLE_TOL: f64 = 1e-3;

/// All real solutions of the perspective-three-point problem.
///
/// Returns an empty list on degenerate samples (coincident or collinear 3D
/// points), which a RANSAC caller treats as "resample".
pub fn p3p_solve(correspondences: &[Correspondence2D3D; 3], camera: &Camera) -> Vec<Pose> {
    let pw = [
        correspondences[0].point,
        correspondences[1].point,
        correspondences[2].point,
    ];
    let d01 = pw[1] - pw[0];
    let d02 = pw[2] - pw[0];
    let d12 = pw[2] - pw[1];
    let scale = d01.norm().max(d02.norm()).max(d12.norm());
    if !(scale.is_finite()) || scale <= 0.0 {
        return Vec::new();
    }
    if d01.norm() < 1e-9 * scale || d02.norm() < 1e-9 * scale || d12.norm() < 1e-9 * scale {
        return Vec::new(); // coincident points
    }
    if d01.cross(&d02).norm() < 1e-9 * scale * scale {
        return Vec::new(); // collinear points
    }

    let j1 = bearing(camera, &correspondences[0].pixel);
    let j2 = bearing(camera, &correspondences[1].pixel);
    let j3 = bearing(camera, &correspondences[2].pixel);

    // Side lengths opposite each vertex and cosines of the inter-ray angles.
    let a = d12.norm();
    let b = d02.norm();
    let c = d01.norm();
    let cos_alpha = j2.dot(&j3);
    let cos_beta = j1.dot(&j3);
    let cos_gamma = j1.dot(&j2);

    let a_sq = a * a;
    let b_sq = b * b;
    let c_sq = c * c;
    let big_a = (a_sq - c_sq) / b_sq;
    let big_b = (a_sq + c_sq) / b_sq;

    let a4 = (big_a - 1.0).powi(2) - 4.0 * c_sq / b_sq * cos_alpha * cos_alpha;
    let a3 = 4.0
        * (big_a * (1.0 - big_a) * cos_beta - (1.0 - big_b) * cos_alpha * cos_gamma
            + 2.0 * c_sq / b_sq * cos_alpha * cos_alpha * cos_beta);
    let a2 = 2.0
        * (big_a * big_a - 1.0
            + 2.0 * big_a * big_a * cos_beta * cos_beta
            + 2.0 * (b_sq - c_sq) / b_sq * cos_alpha * cos_alpha
            - 4.0 * big_b * cos_alpha * cos_beta * cos_gamma
            + 2.0 * (b_sq - a_sq) / b_sq * cos_gamma * cos_gamma);
    let a1 = 4.0
        * (-big_a * (1.0 + big_a) * cos_beta + 2.0 * a_sq / b_sq * cos_gamma * cos_gamma * cos_beta
            - (1.0 - big_b) * cos_alpha * cos_gamma);
    let a0 = (1.0 + big_a).powi(2) - 4.0 * a_sq / b_sq * cos_gamma * cos_gamma;

    let mut poses = Vec::new();
    for v in real_poly_roots(&[a4, a3, a2, a1, a0]) {
        if !(v.is_finite() && v > 0.0) {
            continue;
        }
        let denom = 2.0 * (cos_gamma - v * cos_alpha);
        if denom.abs() < 1e-12 {
            continue;
        }
        let u = ((big_a - 1.0) * v * v - 2.0 * big_a * cos_beta * v + 1.0 + big_a) / denom;
        if !(u.is_finite() && u > 0.0) {
            continue;
        }
        let w = 1.0 + u * u - 2.0 * u * cos_gamma;
        if w <= 1e-300 {
            continue;
        }
        let s1 = c / w.sqrt();
        let s2 = u * s1;
        let s3 = v * s1;
        if !(s1.is_finite() && s2.is_finite() && s3.is_finite() && s1 > 0.0) {
            continue;
        }
        let cam_pts = [s1 * j1, s2 * j2, s3 * j3];
        let Some((r, t)) = rigid_from_three(&pw, &cam_pts) else {
            continue;
        };
        let pose = Pose::from_rotation_translation(Quaternion::from_rotation_matrix(&r), &t);

        let fits = correspondences.iter().all(|corr| {
            project(camera, &pose, &corr.point)
                .map(|px| (px - corr.pixel).norm() <= P3P_SAMPLE_TOL)
                .unwrap_or(false)
        });
        if !fits {
            continue;
        }
        let duplicate = poses.iter().any(|p: &Pose| {
            p.rotation.rotation_approx_eq(&pose.rotation, 1e-12)
                && (p.center - pose.center).norm() < 1e-7 * (1.0 + scale)
        });
        if !duplicate {
            poses.push(pose);
        }
    }
    poses
}

fn reprojection_error_sq(camera: &Camera, pose: &Pose, corr: &Correspondence2D3D) -> Option<f64> {
    project(camera, pose, &corr.point).map(|px| (px - corr.pixel).norm_squared())
}

fn inliers_under(
    camera: &Camera,
    pose: &Pose,
    correspondences: &[Correspondence2D3D],
    threshold: f64,
) -> Vec<usize> {
    let thr_sq = threshold * threshold;
    correspondences
        .iter()
        .enumerate()
        .filter(|(_, corr)| {
            reprojection_error_sq(camera, pose, corr).is_some_and(|e| e <= thr_sq)
        })
        .map(|(i, _)| i)
        .collect()
}

/// Seeded hypothesize-and-verify absolute pose estimation.
///
/// Samples minimal triples, solves P3P, scores candidates by inlier count
/// under the reprojection threshold (ties keep the earlier iteration), and
/// early-exits once the standard `1 − (1 − w³)^N >= confidence` bound is met.
/// The best model is polished with [`refine_pose`] on its inlier set; the
/// refined pose is kept only while it preserves at least `min_inliers`
/// support.
pub fn ransac_pnp(
    correspondences: &[Correspondence2D3D],
    camera: &Camera,
    config: &RansacConfig,
) -> Result<PoseEstimate, PnpFailure> {
    config.validate().map_err(PnpFailure::InvalidConfig)?;
    let n = correspondences.len();
    if n < 4 {
        return Err(PnpFailure::InsufficientCorrespondences { found: n });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let thr_sq = config.reprojection_threshold * config.reprojection_threshold;

    // `best` stays `None` only if every sampled minimal set was degenerate:
    // any P3P candidate scores at least its own sample as inliers.
    let mut best: Option<(usize, Pose)> = None; // (inlier count, pose)
    let mut required = config.max_iterations;
    let mut iterations_used = 0;

    for iteration in 0..config.max_iterations {
        if iteration >= required {
            break;
        }
        iterations_used = iteration + 1;

        let picked = rand::seq::index::sample(&mut rng, n, 3);
        let sample = [
            correspondences[picked.index(0)].clone(),
            correspondences[picked.index(1)].clone(),
            correspondences[picked.index(2)].clone(),
        ];
        for candidate in p3p_solve(&sample, camera) {
            let count = correspondences
                .iter()
                .filter(|corr| {
                    reprojection_error_sq(camera, &candidate, corr).is_some_and(|e| e <= thr_sq)
                })
                .count();
            if best.as_ref().is_none_or(|(c, _)| count > *c) {
                best = Some((count, candidate));
                let w = count as f64 / n as f64;
                let p_good = w * w * w;
                if p_good >= 1.0 {
                    required = iteration + 1;
                } else if p_good > 0.0 {
                    let need = ((1.0 - config.confidence).ln() / (1.0 - p_good).ln()).ceil();
                    if need.is_finite() {
                        required = (need as usize).clamp(iteration + 1, config.max_iterations);
                    }
                }
            }
        }
    }

    let Some((best_count, best_pose)) = best else {
        return Err(PnpFailure::DegenerateGeometry);
    };
    if best_count < config.min_inliers {
        return Err(PnpFailure::InsufficientInliers {
            found: best_count,
            required: config.min_inliers,
        });
    }

    let inlier_idx = inliers_under(camera, &best_pose, correspondences, config.reprojection_threshold);
    let inlier_set: Vec<Correspondence2D3D> =
        inlier_idx.iter().map(|&i| correspondences[i].clone()).collect();
    let refinement = refine_pose_detailed(&best_pose, &inlier_set, camera);
    let refined_idx = inliers_under(
        camera,
        &refinement.pose,
        correspondences,
        config.reprojection_threshold,
    );

    let (pose, final_idx, converged) = if refined_idx.len() >= config.min_inliers {
        (refinement.pose, refined_idx, refinement.converged)
    } else {
        // Refinement drifted off the consensus set; keep the raw model.
        (best_pose, inlier_idx, false)
    };

    let mean_err = final_idx
        .iter()
        .map(|&i| {
            reprojection_error_sq(camera, &pose, &correspondences[i])
                .expect("inlier projects")
                .sqrt()
        })
        .sum::<f64>()
        / final_idx.len() as f64;

    Ok(PoseEstimate {
        pose,
        inlier_indices: final_idx,
        iterations_used,
        mean_reprojection_error: mean_err,
        refinement_converged: converged,
    })
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Projection of `point` together with the 2x6 Jacobian of the pixel with
/// respect to the pose increment `[ω, δc]`, where the updated pose is
/// `R ← exp([ω]×)·R`, `C ← C + δc`. `None` when the point is behind the
/// camera.
pub fn projection_with_jacobian(
    camera: &Camera,
    pose: &Pose,
    point: &Vector3<f64>,
) -> Option<(Vector2<f64>, SMatrix<f64, 2, 6>)> {
    let rot = pose.rotation.to_rotation_matrix();
    let p = rot * (point - pose.center);
    if p.z <= MIN_DEPTH {
        return None;
    }
    let inv_z = 1.0 / p.z;
    let projection = Vector2::new(
        camera.fx * p.x * inv_z + camera.cx,
        camera.fy * p.y * inv_z + camera.cy,
    );
    let dpix = Matrix2x3::new(
        camera.fx * inv_z,
        0.0,
        -camera.fx * p.x * inv_z * inv_z,
        0.0,
        camera.fy * inv_z,
        -camera.fy * p.y * inv_z * inv_z,
    );
    let dp_domega = -skew(&p);
    let dp_dcenter = -rot;
    let mut jac = SMatrix::<f64, 2, 6>::zeros();
    jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dpix * dp_domega));
    jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&(dpix * dp_dcenter));
    Some((projection, jac))
}

/// Outcome of [`refine_pose_detailed`].
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub pose: Pose,
    pub converged: bool,
    /// Accepted Levenberg-Marquardt steps.
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
}

/// Levenberg-Marquardt minimization of the summed squared reprojection error
/// over the given correspondences. Only cost-decreasing steps are accepted,
/// so the returned pose never fits worse than the initial one. Terminates on
/// a relative cost change below 1e-10, on a vanishing step, or after 50
/// accepted iterations.
pub fn refine_pose_detailed(
    initial: &Pose,
    inliers: &[Correspondence2D3D],
    camera: &Camera,
) -> Refinement {
    let mut pose = Pose::new(initial.rotation, initial.center);

    let cost_of = |pose: &Pose| -> Option<f64> {
        let mut total = 0.0;
        for corr in inliers {
            let px = project(camera, pose, &corr.point)?;
            total += (px - corr.pixel).norm_squared();
        }
        Some(total)
    };

    let Some(mut cost) = cost_of(&pose) else {
        return Refinement {
            pose,
            converged: false,
            iterations: 0,
            initial_cost: f64::INFINITY,
            final_cost: f64::INFINITY,
        };
    };
    let initial_cost = cost;
    if inliers.len() < 4 {
        return Refinement {
            pose,
            converged: false,
            iterations: 0,
            initial_cost,
            final_cost: cost,
        };
    }

    let mut lambda = 1e-6;
    let mut converged = false;
    let mut iterations = 0;

    'outer: for _ in 0..50 {
        let mut hessian = Matrix6::<f64>::zeros();
        let mut gradient = Vector6::<f64>::zeros();
        for corr in inliers {
            let Some((proj, jac)) = projection_with_jacobian(camera, &pose, &corr.point) else {
                break 'outer;
            };
            let residual = proj - corr.pixel;
            hessian += jac.transpose() * jac;
            gradient += jac.transpose() * residual;
        }

        let mut accepted = false;
        for _ in 0..16 {
            let mut damped = hessian;
            for i in 0..6 {
                damped[(i, i)] += lambda * hessian[(i, i)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-gradient));
            let omega = Vector3::new(delta[0], delta[1], delta[2]);
            let step = Quaternion::from_axis_angle(&omega, omega.norm());
            let candidate = Pose::new(
                step * pose.rotation,
                pose.center + Vector3::new(delta[3], delta[4], delta[5]),
            );
            match cost_of(&candidate) {
                Some(new_cost) if new_cost < cost => {
                    let relative_drop = (cost - new_cost) / cost.max(1e-300);
                    pose = candidate;
                    cost = new_cost;
                    iterations += 1;
                    lambda = (lambda * 0.1).max(1e-12);
                    accepted = true;
                    if relative_drop < 1e-10 {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        break;
                    }
                }
            }
        }
        if !accepted {
            // No damped direction improves the cost: we are at a numerical
            // optimum.
            converged = true;
            break;
        }
    }

    Refinement {
        pose,
        converged,
        iterations,
        initial_cost,
        final_cost: cost,
    }
}

/// Convenience wrapper around [`refine_pose_detailed`] returning the pose.
pub fn refine_pose(initial: &Pose, inliers: &[Correspondence2D3D], camera: &Camera) -> Pose {
    refine_pose_detailed(initial, inliers, camera).pose
}
