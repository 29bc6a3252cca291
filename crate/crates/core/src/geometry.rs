//! Rigid-body transforms, quaternion algebra, pinhole projection and the
//! absolute pose-error metrics.
//!
//! Conventions, fixed once for the whole crate:
//!
//! - A [`Pose`] stores the world-to-camera rotation and the camera *center*
//!   in the world frame. A world point `X` maps to camera coordinates
//!   `R · (X − C)`.
//! - Quaternions are stored `(w, x, y, z)` and kept unit-norm; `q` and `−q`
//!   denote the same rotation, so all rotation comparisons are sign-invariant.
//! - Pixel coordinates follow the usual CV convention: `u` right, `v` down,
//!   origin at the top-left corner.

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

/// Camera-frame depth below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

/// A rotation as a unit quaternion in `(w, x, y, z)` storage order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    /// Rotation of `angle_rad` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle_rad: f64) -> Self {
        let n = axis.norm();
        if n < 1e-300 {
            return Self::IDENTITY;
        }
        let half = 0.5 * angle_rad;
        let s = half.sin() / n;
        Quaternion {
            w: half.cos(),
            x: axis.x * s,
            y: axis.y * s,
            z: axis.z * s,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Unit-norm copy. Inputs that are already unit within 1e-12 are returned
    /// unchanged, which makes normalization idempotent at the bit level and
    /// keeps canonical files stable across save/load cycles.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if (n - 1.0).abs() < 1e-12 {
            *self
        } else {
            Quaternion {
                w: self.w / n,
                x: self.x / n,
                y: self.y / n,
                z: self.z / n,
            }
        }
    }

    /// Conjugate; equals the inverse for unit quaternions.
    pub fn conjugate(&self) -> Self {
        Quaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Rotate a vector: `q v q*`.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let u = Vector3::new(self.x, self.y, self.z);
        let uv = u.cross(v);
        v + 2.0 * (self.w * uv + u.cross(&uv))
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Quaternion of a rotation matrix (Shepperd's method: branch on the
    /// largest of trace and diagonal entries for numerical stability).
    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Self {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quaternion {
                w: 0.25 * s,
                x: (m[(2, 1)] - m[(1, 2)]) / s,
                y: (m[(0, 2)] - m[(2, 0)]) / s,
                z: (m[(1, 0)] - m[(0, 1)]) / s,
            }
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quaternion {
                w: (m[(2, 1)] - m[(1, 2)]) / s,
                x: 0.25 * s,
                y: (m[(0, 1)] + m[(1, 0)]) / s,
                z: (m[(0, 2)] + m[(2, 0)]) / s,
            }
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quaternion {
                w: (m[(0, 2)] - m[(2, 0)]) / s,
                x: (m[(0, 1)] + m[(1, 0)]) / s,
                y: 0.25 * s,
                z: (m[(1, 2)] + m[(2, 1)]) / s,
            }
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quaternion {
                w: (m[(1, 0)] - m[(0, 1)]) / s,
                x: (m[(0, 2)] + m[(2, 0)]) / s,
                y: (m[(1, 2)] + m[(2, 1)]) / s,
                z: 0.25 * s,
            }
        };
        q.normalized()
    }

    /// True when both quaternions encode the same rotation within `tol`,
    /// treating `q` and `−q` as equal.
    pub fn rotation_approx_eq(&self, other: &Quaternion, tol: f64) -> bool {
        let d = self.dot(other).abs();
        (1.0 - d).abs() <= tol
    }
}

impl std::ops::Mul for Quaternion {
    type Output = Quaternion;

    /// Hamilton product.
    fn mul(self, rhs: Quaternion) -> Quaternion {
        Quaternion {
            w: self.w * rhs.w - self.x * rhs.x - self.y * rhs.y - self.z * rhs.z,
            x: self.w * rhs.x + self.x * rhs.w + self.y * rhs.z - self.z * rhs.y,
            y: self.w * rhs.y - self.x * rhs.z + self.y * rhs.w + self.z * rhs.x,
            z: self.w * rhs.z + self.x * rhs.y - self.y * rhs.x + self.z * rhs.w,
        }
    }
}

/// World-to-camera rigid transform: unit rotation plus camera center in the
/// world frame. `world_to_camera(X) = R · (X − C)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Quaternion,
    pub center: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Quaternion::IDENTITY,
            center: Vector3::zeros(),
        }
    }

    /// Builds a pose, normalizing the rotation.
    pub fn new(rotation: Quaternion, center: Vector3<f64>) -> Self {
        Pose {
            rotation: rotation.normalized(),
            center,
        }
    }

    /// Pose from the `(R, t)` form `p_cam = R · p_world + t`.
    pub fn from_rotation_translation(rotation: Quaternion, translation: &Vector3<f64>) -> Self {
        let rotation = rotation.normalized();
        let center = -rotation.conjugate().rotate(translation);
        Pose { rotation, center }
    }

    /// Translation `t` of the equivalent `(R, t)` form.
    pub fn translation(&self) -> Vector3<f64> {
        -self.rotation.rotate(&self.center)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(&(p - self.center))
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.conjugate().rotate(p) + self.center
    }

    pub fn inverse(&self) -> Pose {
        Pose {
            rotation: self.rotation.conjugate(),
            center: -self.rotation.rotate(&self.center),
        }
    }

    /// Composition as transforms: `a.compose(b)` applies `b` first, then `a`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: (self.rotation * other.rotation).normalized(),
            center: other.center + other.rotation.conjugate().rotate(&self.center),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid camera: {reason}")]
pub struct InvalidCamera {
    pub reason: String,
}

/// Zero-distortion pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    /// Focal lengths in pixels.
    pub fx: f64,
    pub fy: f64,
    /// Principal point in pixels.
    pub cx: f64,
    pub cy: f64,
    /// Image size in pixels.
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, InvalidCamera> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), InvalidCamera> {
        let fail = |reason: String| Err(InvalidCamera { reason });
        if !(self.fx.is_finite() && self.fy.is_finite() && self.fx > 0.0 && self.fy > 0.0) {
            return fail(format!("focal lengths must be positive, got ({}, {})", self.fx, self.fy));
        }
        if !(self.cx.is_finite() && self.cx > 0.0 && self.cx < self.width as f64) {
            return fail(format!("cx = {} outside (0, {})", self.cx, self.width));
        }
        if !(self.cy.is_finite() && self.cy > 0.0 && self.cy < self.height as f64) {
            return fail(format!("cy = {} outside (0, {})", self.cy, self.height));
        }
        Ok(())
    }

    /// True when the pixel lies inside the image bounds.
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.x < self.width as f64
            && pixel.y >= 0.0
            && pixel.y < self.height as f64
    }
}

/// Pinhole projection of a world point. Returns `None` when the point's
/// camera-frame depth is at or below [`MIN_DEPTH`]; the returned pixel may
/// lie outside the image bounds (callers filter with [`Camera::contains`]).
pub fn project(camera: &Camera, pose: &Pose, point: &Vector3<f64>) -> Option<Vector2<f64>> {
    let p = pose.world_to_camera(point);
    if p.z <= MIN_DEPTH {
        return None;
    }
    Some(Vector2::new(
        camera.fx * p.x / p.z + camera.cx,
        camera.fy * p.y / p.z + camera.cy,
    ))
}

/// Inverse of [`project`]: the world point on the viewing ray of `pixel` at
/// camera-frame depth `depth`.
pub fn unproject(camera: &Camera, pose: &Pose, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
    let dir = Vector3::new(
        (pixel.x - camera.cx) / camera.fx,
        (pixel.y - camera.cy) / camera.fy,
        1.0,
    );
    pose.camera_to_world(&(dir * depth))
}

/// Absolute translation error in meters: the Euclidean distance between the
/// two camera centers.
pub fn translation_error(estimate: &Pose, truth: &Pose) -> f64 {
    (estimate.center - truth.center).norm()
}

/// Absolute rotation error in degrees: `2·arccos(|scalar(q⁻¹·q̂)|)·180/π`,
/// the geodesic angle between the two rotations, in `[0, 180]` and
/// sign-invariant in both arguments.
///
/// Evaluated as `2·atan2(‖vec(r)‖, |scalar(r)|)` — the same function, but
/// exact for identical rotations (where the vector part cancels to zero
/// bit-for-bit) and well conditioned near 0° where arccos loses precision.
pub fn rotation_error(estimate: &Pose, truth: &Pose) -> f64 {
    let rel = truth.rotation.conjugate() * estimate.rotation;
    let vec_norm = (rel.x * rel.x + rel.y * rel.y + rel.z * rel.z).sqrt();
    2.0 * vec_norm.atan2(rel.w.abs()).to_degrees()
}
