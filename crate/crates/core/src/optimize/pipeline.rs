//! End-to-end stabilization.

use rayon::prelude::*;

use super::{extrapolate_frames, optimize_video, LossBreakdown, OptimConfig};
use crate::bundle::VideoBundle;
use crate::error::Result;
use crate::geometry::Pose;
use crate::grid::{Image, Mask};
use crate::splat::{render, GaussianScene};
use crate::trajectory::{smooth_trajectory, SmoothingConfig, Trajectory};

/// Output pixels with at least this much accumulated opacity count as valid.
pub const COVERAGE_ALPHA: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct Stabilized {
    pub frames: Vec<Image>,
    pub coverage: Vec<Mask>,
    pub poses: Vec<Pose>,
    /// Optimized scenes in the frame of the padded intrinsics.
    pub scenes: Vec<GaussianScene>,
    pub history: Vec<Vec<LossBreakdown>>,
}

/// Extrapolates, builds and optimizes one scene per frame, smooths the
/// trajectory, and renders scene `k` at smoothed pose `k` with the original
/// intrinsics.
pub fn stabilize(bundle: &VideoBundle, smoothing: &SmoothingConfig, pad: usize, cfg: &OptimConfig) -> Result<Stabilized> {
    let padded = extrapolate_frames(bundle, pad)?;
    let optimized = optimize_video(&padded, cfg)?;
    let smooth = smooth_trajectory(&Trajectory::new(bundle.poses.clone())?, smoothing)?.into_poses();
    let k = &bundle.intrinsics;
    let renders: Vec<_> = optimized
        .scenes
        .par_iter()
        .zip(&smooth)
        .map(|(scene, pose)| render(scene, k, pose))
        .collect();
    let (frames, coverage) = renders
        .into_iter()
        .map(|r| {
            let mask = r.alpha.map(|&a| a >= COVERAGE_ALPHA);
            (r.color, mask)
        })
        .unzip();
    Ok(Stabilized {
        frames,
        coverage,
        poses: smooth,
        scenes: optimized.scenes,
        history: optimized.history,
    })
}
