//! Pinhole cameras, rigid poses and the projection maps between them.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};

/// Camera-space depth below which a point is treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid("principal point must lie inside the image"));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Camera-space ray through pixel `(u, v)` with unit z.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Same camera on a canvas grown by `pad` pixels on every side.
    pub fn padded(&self, pad: usize) -> Self {
        CameraIntrinsics {
            cx: self.cx + pad as f64,
            cy: self.cy + pad as f64,
            width: self.width + 2 * pad,
            height: self.height + 2 * pad,
            ..*self
        }
    }

    /// Resolution scaled by an integer factor with pixel centres kept on the
    /// integer lattice.
    pub fn scaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        CameraIntrinsics {
            fx: self.fx * f,
            fy: self.fy * f,
            cx: self.cx * f,
            cy: self.cy * f,
            width: self.width * factor,
            height: self.height * factor,
        }
    }

    /// Intrinsics with the principal point moved by a lens-shift offset.
    pub fn shifted(&self, dx: f64, dy: f64) -> Self {
        CameraIntrinsics {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose::new(UnitQuaternion::identity(), Vector3::new(x, y, z))
    }

    /// Builds a pose from a `[w, x, y, z]` quaternion, normalizing it.
    pub fn from_wxyz(q: [f64; 4], t: [f64; 3]) -> Result<Self> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let n = quat.norm();
        if !n.is_finite() || n < 1e-12 || t.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pose has a degenerate quaternion or non-finite translation"));
        }
        Ok(Pose::new(UnitQuaternion::from_quaternion(quat), Vector3::from(t)))
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let q = renormalize(self.rotation * other.rotation);
        Pose::new(q, self.rotation * other.translation + self.translation)
    }

    /// Maps a camera-frame point into the world.
    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Maps a world point into this camera's frame.
    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(p - self.translation))
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }
}

/// Re-projects a quaternion onto the unit sphere after composition.
#[inline]
pub fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(q.into_inner())
}

/// Relative transform `b ∘ inverse(a)`, i.e. the rigid motion taking pose `a`
/// to pose `b`.
pub fn relative_pose(a: &Pose, b: &Pose) -> Pose {
    b.compose(&a.inverse())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub depth: f64,
    pub valid: bool,
}

#[inline]
pub fn project_point(p: &Vector3<f64>, k: &CameraIntrinsics, pose: &Pose) -> Projection {
    let c = pose.world_to_camera(p);
    let valid = c.z > MIN_DEPTH && c.iter().all(|v| v.is_finite());
    let pixel = if valid {
        Vector2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy)
    } else {
        Vector2::zeros()
    };
    Projection {
        pixel,
        depth: c.z,
        valid,
    }
}

/// Projects world points into the camera. Points at or behind the camera
/// (`z <= MIN_DEPTH`) come back with `valid == false`.
pub fn project(points: &[Vector3<f64>], k: &CameraIntrinsics, pose: &Pose) -> Vec<Projection> {
    points.iter().map(|p| project_point(p, k, pose)).collect()
}

/// Metric depth per pixel with an explicit validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub values: Grid<f64>,
    pub valid: Mask,
}

impl DepthMap {
    /// Wraps raw depths; entries that are non-finite or `<= 0` are invalid.
    pub fn from_values(values: Grid<f64>) -> Self {
        let valid = values.map(|&d| d.is_finite() && d > 0.0);
        DepthMap { values, valid }
    }

    pub fn uniform(width: usize, height: usize, depth: f64) -> Self {
        DepthMap::from_values(Grid::filled(width, height, depth))
    }

    pub fn empty(width: usize, height: usize) -> Self {
        DepthMap {
            values: Grid::filled(width, height, 0.0),
            valid: Grid::filled(width, height, false),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Option<f64> {
        if *self.valid.get(x, y) {
            Some(*self.values.get(x, y))
        } else {
            None
        }
    }
}

/// Lifts every valid depth pixel into the world frame.
pub fn unproject(depth: &DepthMap, k: &CameraIntrinsics, pose: &Pose) -> Result<Grid<Option<Vector3<f64>>>> {
    depth.values.ensure_dims(k.dims())?;
    Ok(Grid::from_fn(k.width, k.height, |x, y| {
        depth
            .at(x, y)
            .map(|d| pose.transform_point(&(k.ray(x as f64, y as f64) * d)))
    }))
}

/// Homography taking source pixels to destination pixels when the two
/// cameras differ only by rotation (both camera-to-world):
/// `K_dst · R_dstᵀ · R_src · K_src⁻¹`.
pub fn rotation_homography(
    k_dst: &CameraIntrinsics,
    r_dst: &UnitQuaternion<f64>,
    r_src: &UnitQuaternion<f64>,
    k_src: &CameraIntrinsics,
) -> Matrix3<f64> {
    let rel = (r_dst.inverse() * r_src).to_rotation_matrix().into_inner();
    k_dst.matrix() * rel * k_src.inverse_matrix()
}

/// Applies a homography to a pixel; `None` if the point maps to infinity.
#[inline]
pub fn apply_homography(h: &Matrix3<f64>, x: f64, y: f64) -> Option<Vector2<f64>> {
    let p = h * Vector3::new(x, y, 1.0);
    if p.z.abs() < 1e-12 || !p.z.is_finite() {
        return None;
    }
    Some(Vector2::new(p.x / p.z, p.y / p.z))
}
