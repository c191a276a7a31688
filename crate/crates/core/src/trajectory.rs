//! Gaussian filtering of camera trajectories.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{relative_pose, Pose};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::invalid("trajectory must contain at least one pose"));
        }
        Ok(Trajectory { poses })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn get(&self, k: usize) -> &Pose {
        &self.poses[k]
    }

    pub fn into_poses(self) -> Vec<Pose> {
        self.poses
    }
}

impl std::ops::Index<usize> for Trajectory {
    type Output = Pose;
    fn index(&self, k: usize) -> &Pose {
        &self.poses[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    pub sigma_s: f64,
    pub window: usize,
}

impl SmoothingConfig {
    /// Window of `2·ceil(3σ)+1` frames.
    pub fn with_auto_window(sigma_s: f64) -> Result<Self> {
        if !(sigma_s > 0.0) || !sigma_s.is_finite() {
            return Err(Error::invalid("sigma_s must be positive"));
        }
        let half = (3.0 * sigma_s).ceil() as usize;
        Ok(SmoothingConfig {
            sigma_s,
            window: 2 * half + 1,
        })
    }

    pub fn new(sigma_s: f64, window: usize) -> Result<Self> {
        let cfg = SmoothingConfig { sigma_s, window };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_s > 0.0) || !self.sigma_s.is_finite() {
            return Err(Error::invalid("sigma_s must be positive"));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::invalid("window must be odd"));
        }
        Ok(())
    }
}

/// Normalized Gaussian weights `(frame, weight)` for center frame `k`, with
/// the window clipped to `[0, len)`.
pub fn gaussian_weights(k: usize, window: usize, sigma_s: f64, len: usize) -> Result<Vec<(usize, f64)>> {
    SmoothingConfig::new(sigma_s, window)?;
    if k >= len {
        return Err(Error::invalid(format!("center frame {k} outside trajectory of {len}")));
    }
    let half = window / 2;
    let lo = k.saturating_sub(half);
    let hi = (k + half).min(len - 1);
    let mut w: Vec<(usize, f64)> = (lo..=hi)
        .map(|i| {
            let r = (i as f64 - k as f64).abs() / sigma_s;
            (i, (-0.5 * r * r).exp())
        })
        .collect();
    let total: f64 = w.iter().map(|(_, g)| g).sum();
    for (_, g) in &mut w {
        *g /= total;
    }
    Ok(w)
}

/// Weighted blend of unit quaternions after flipping each into the
/// hemisphere of `reference`.
pub fn blend_rotations(
    reference: &UnitQuaternion<f64>,
    rotations: impl IntoIterator<Item = (UnitQuaternion<f64>, f64)>,
) -> UnitQuaternion<f64> {
    let r = reference.quaternion().coords;
    let mut acc = nalgebra::Vector4::zeros();
    for (q, w) in rotations {
        let c = q.quaternion().coords;
        let s = if c.dot(&r) < 0.0 { -1.0 } else { 1.0 };
        acc += c * (s * w);
    }
    if acc.norm() < 1e-15 {
        return *reference;
    }
    UnitQuaternion::from_quaternion(Quaternion::from(acc))
}

/// Gaussian-filters translations (weighted mean) and rotations (sign-aligned
/// normalized blend) of every pose.
pub fn smooth_trajectory(traj: &Trajectory, cfg: &SmoothingConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let n = traj.len();
    let poses = (0..n)
        .map(|k| {
            let w = gaussian_weights(k, cfg.window, cfg.sigma_s, n)?;
            let t = w
                .iter()
                .fold(Vector3::zeros(), |acc, &(i, g)| acc + traj[i].translation * g);
            let q = blend_rotations(&traj[k].rotation, w.iter().map(|&(i, g)| (traj[i].rotation, g)));
            Ok(Pose::new(q, t))
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(poses)
}

/// Per-frame rigid motion taking `src[k]` onto `dst[k]`.
pub fn stabilizing_transforms(src: &Trajectory, dst: &Trajectory) -> Result<Vec<Pose>> {
    if src.len() != dst.len() {
        return Err(Error::invalid(format!(
            "trajectory length mismatch: {} vs {}",
            src.len(),
            dst.len()
        )));
    }
    Ok(src
        .poses()
        .iter()
        .zip(dst.poses())
        .map(|(s, d)| relative_pose(s, d))
        .collect())
}

/// Sum of squared second differences of the translation sequence.
pub fn second_difference_energy(traj: &Trajectory) -> f64 {
    traj.poses()
        .windows(3)
        .map(|w| (w[0].translation - 2.0 * w[1].translation + w[2].translation).norm_squared())
        .sum()
}
