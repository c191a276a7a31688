//! Robust metric scale between sparse SfM geometry and dense depth.
//!
//! Scales are estimated in log-depth space so near and far errors weigh
//! equally: per frame with RANSAC, then globally as the median.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{project_point, CameraIntrinsics, DepthMap, Pose};

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_ITERS: usize = 256;
pub const DEFAULT_SAMPLE_SIZE: usize = 8;

/// Triangulated points plus per-frame visibility lists.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePointSet {
    pub points: Vec<Vector3<f64>>,
    pub visibility: BTreeMap<usize, Vec<usize>>,
}

impl SparsePointSet {
    pub fn new(points: Vec<Vector3<f64>>, visibility: BTreeMap<usize, Vec<usize>>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("sparse points must be finite"));
        }
        for (frame, idx) in &visibility {
            if let Some(bad) = idx.iter().find(|&&i| i >= points.len()) {
                return Err(Error::invalid(format!(
                    "frame {frame} references point {bad} of {}",
                    points.len()
                )));
            }
        }
        Ok(SparsePointSet { points, visibility })
    }

    pub fn visible(&self, frame: usize) -> impl Iterator<Item = &Vector3<f64>> {
        self.visibility
            .get(&frame)
            .into_iter()
            .flatten()
            .map(|&i| &self.points[i])
    }

    /// Rescales every point about the world origin.
    pub fn scaled(&self, s: f64) -> Self {
        SparsePointSet {
            points: self.points.iter().map(|p| p * s).collect(),
            visibility: self.visibility.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleEstimate {
    /// Multiplier taking dense depth to the sparse reconstruction's units.
    pub scale: f64,
    pub inlier_count: usize,
    pub sample_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iters: usize,
    pub tau: f64,
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            iters: DEFAULT_ITERS,
            tau: DEFAULT_TAU,
            sample_size: DEFAULT_SAMPLE_SIZE,
            seed: 0,
        }
    }
}

/// Splats the points visible from `pose` into a sparse depth map by
/// nearest-pixel rounding, keeping the nearest point per pixel.
pub fn sparse_depth<'a>(
    points: impl IntoIterator<Item = &'a Vector3<f64>>,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> DepthMap {
    let mut d = DepthMap::empty(k.width, k.height);
    for p in points {
        let pr = project_point(p, k, pose);
        if !pr.valid {
            continue;
        }
        let (u, v) = (pr.pixel.x.round(), pr.pixel.y.round());
        if u < 0.0 || v < 0.0 || u >= k.width as f64 || v >= k.height as f64 {
            continue;
        }
        let (u, v) = (u as usize, v as usize);
        if d.at(u, v).is_none_or(|z| pr.depth < z) {
            d.values.set(u, v, pr.depth);
            d.valid.set(u, v, true);
        }
    }
    d
}

/// Log-ratio `log(sparse) - log(dense)` at every pixel valid in both maps.
fn log_ratios(dense: &DepthMap, sparse: &DepthMap) -> Result<Vec<f64>> {
    sparse.values.ensure_dims(dense.dims())?;
    let (w, h) = dense.dims();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if let (Some(a), Some(b)) = (dense.at(x, y), sparse.at(x, y)) {
                out.push(b.ln() - a.ln());
            }
        }
    }
    Ok(out)
}

/// RANSAC over log-depth ratios. Each hypothesis is the exponentiated mean
/// log ratio of a random subset; the best (most inliers, earliest on ties) is
/// refit on its inliers.
pub fn ransac_log_scale(dense: &DepthMap, sparse: &DepthMap, cfg: &RansacConfig) -> Result<ScaleEstimate> {
    let r = log_ratios(dense, sparse)?;
    ransac_on_log_ratios(&r, cfg)
}

pub(crate) fn ransac_on_log_ratios(r: &[f64], cfg: &RansacConfig) -> Result<ScaleEstimate> {
    if cfg.sample_size == 0 || r.len() < cfg.sample_size {
        return Err(Error::TooFewCorrespondences {
            needed: cfg.sample_size.max(1),
            available: r.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let count_inliers = |log_s: f64| r.iter().filter(|&&v| (v - log_s).abs() < cfg.tau).count();
    let mut best = (0usize, f64::NAN);
    for _ in 0..cfg.iters.max(1) {
        let idx = sample(&mut rng, r.len(), cfg.sample_size);
        let log_s = idx.iter().map(|i| r[i]).sum::<f64>() / cfg.sample_size as f64;
        let n = count_inliers(log_s);
        if n > best.0 || best.1.is_nan() {
            best = (n, log_s);
        }
    }
    let (n, log_s) = best;
    let inliers: Vec<f64> = r.iter().copied().filter(|v| (v - log_s).abs() < cfg.tau).collect();
    let refit = if inliers.is_empty() {
        log_s
    } else {
        inliers.iter().sum::<f64>() / inliers.len() as f64
    };
    Ok(ScaleEstimate {
        scale: refit.exp(),
        inlier_count: n,
        sample_count: r.len(),
        seed: cfg.seed,
    })
}

/// Lower median of the per-frame scales.
pub fn global_scale(per_frame: &[f64]) -> Result<f64> {
    if per_frame.is_empty() {
        return Err(Error::invalid("no per-frame scales to combine"));
    }
    let mut v = per_frame.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v[(v.len() - 1) / 2])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub per_frame: Vec<Option<ScaleEstimate>>,
    pub global: f64,
}

/// Per-frame RANSAC scales and their median. Frames with too few
/// correspondences are skipped. Frame `k` uses seed `cfg.seed + k`.
pub fn align_sequence(
    depths: &[DepthMap],
    poses: &[Pose],
    k: &CameraIntrinsics,
    points: &SparsePointSet,
    cfg: &RansacConfig,
) -> Result<Alignment> {
    if depths.len() != poses.len() {
        return Err(Error::invalid("depth and pose counts differ"));
    }
    let per_frame: Vec<Option<ScaleEstimate>> = depths
        .iter()
        .zip(poses)
        .enumerate()
        .map(|(f, (d, p))| {
            let sparse = sparse_depth(points.visible(f), p, k);
            let c = RansacConfig {
                seed: cfg.seed.wrapping_add(f as u64),
                ..*cfg
            };
            match ransac_log_scale(d, &sparse, &c) {
                Ok(s) => Ok(Some(s)),
                Err(Error::TooFewCorrespondences { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let scales: Vec<f64> = per_frame.iter().flatten().map(|s| s.scale).collect();
    let global = global_scale(&scales)?;
    Ok(Alignment { per_frame, global })
}

/// Brings poses and sparse points into metric depth units. `alpha` is the
/// dense→sparse multiplier, so translations and points are divided by it.
pub fn apply_global_scale(poses: &[Pose], points: &SparsePointSet, alpha: f64) -> (Vec<Pose>, SparsePointSet) {
    let s = 1.0 / alpha;
    let poses = poses.iter().map(|p| Pose::new(p.rotation, p.translation * s)).collect();
    (poses, points.scaled(s))
}
