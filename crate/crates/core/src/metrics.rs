//! Evaluation metrics for stabilized videos.
//!
//! Stability is the share of low-frequency energy in the detrended spectrum
//! of feature tracks (bins 2..=6 over bins 2..=N/2, zero-based FFT bins),
//! the convention of the earlier stabilization literature.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_point, CameraIntrinsics, Pose};
use crate::grid::{psnr_from_mse, Grid, Image, Mask};
use crate::scale_align::SparsePointSet;
use crate::splat::{render_primitives, GaussianPrimitive};

pub const STABILITY_LOW_BINS: std::ops::RangeInclusive<usize> = 2..=6;
/// Shortest visible run of a track that enters the stability score.
pub const MIN_TRACK_FRAMES: usize = 32;
pub const HOLDOUT_INTERVAL: usize = 8;
pub const MIN_GC_DENSE_FRAMES: usize = 16;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cropping_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub distortion: Option<f64>,
    /// Per-frame distortion; `None` for skipped (degenerate) frames.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub distortion_per_frame: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stability: Option<f64>,
    /// Mean reprojection error in pixels.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gc_sparse: Option<f64>,
    /// Held-out PSNR in dB.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gc_dense: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub points: Vec<Option<[f64; 2]>>,
}

/// Serialized as a bare list of tracks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrackSet {
    pub tracks: Vec<Track>,
}

impl TrackSet {
    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.tracks.iter().enumerate() {
            if t.points.iter().flatten().count() < 2 {
                return Err(Error::invalid(format!("track {i} has fewer than 2 visible frames")));
            }
            if t.points.iter().flatten().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("track {i} has non-finite coordinates")));
            }
        }
        Ok(())
    }
}

/// Tracks of world points projected through `poses`; a point is visible
/// where it lands inside the image in front of the camera. Tracks with
/// fewer than two visible frames are dropped.
pub fn project_tracks(points: &[Vector3<f64>], k: &CameraIntrinsics, poses: &[Pose]) -> TrackSet {
    let (w, h) = (k.width as f64, k.height as f64);
    let tracks = points
        .iter()
        .map(|p| Track {
            points: poses
                .iter()
                .map(|pose| {
                    let pr = project_point(p, k, pose);
                    let q = pr.pixel;
                    (pr.valid && q.x >= -0.5 && q.y >= -0.5 && q.x < w - 0.5 && q.y < h - 0.5).then_some([q.x, q.y])
                })
                .collect(),
        })
        .filter(|t| t.points.iter().flatten().count() >= 2)
        .collect();
    TrackSet { tracks }
}

/// Area of the largest all-true axis-aligned rectangle.
fn largest_rectangle(mask: &Mask) -> usize {
    let (w, h) = mask.dims();
    let mut heights = vec![0usize; w];
    let mut best = 0;
    let mut stack: Vec<usize> = Vec::with_capacity(w + 1);
    for y in 0..h {
        for (x, hgt) in heights.iter_mut().enumerate() {
            *hgt = if *mask.get(x, y) { *hgt + 1 } else { 0 };
        }
        stack.clear();
        for x in 0..=w {
            let cur = if x < w { heights[x] } else { 0 };
            while let Some(&top) = stack.last() {
                if heights[top] < cur {
                    break;
                }
                stack.pop();
                let left = stack.last().map_or(0, |&l| l + 1);
                best = best.max(heights[top] * (x - left));
            }
            stack.push(x);
        }
    }
    best
}

/// Mean over frames of the largest valid rectangle's share of the frame.
pub fn cropping_ratio(masks: &[Mask]) -> Result<f64> {
    let Some(first) = masks.first() else {
        return Err(Error::invalid("cropping ratio of an empty sequence"));
    };
    for m in masks {
        m.ensure_dims(first.dims())?;
    }
    let area = first.len();
    if area == 0 {
        return Err(Error::invalid("cropping ratio of empty frames"));
    }
    let ratios: Vec<f64> = masks.par_iter().map(|m| largest_rectangle(m) as f64 / area as f64).collect();
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Point matches between a source frame and its stabilized counterpart.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMatches {
    pub src: Vec<[f64; 2]>,
    pub dst: Vec<[f64; 2]>,
}

fn hartley(points: &[[f64; 2]]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0] / n, b + p[1] / n));
    let spread = points.iter().map(|p| ((p[0] - mx).powi(2) + (p[1] - my).powi(2)).sqrt()).sum::<f64>() / n;
    if !(spread > 1e-12) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / spread;
    Some(Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0))
}

/// Homography mapping `src` onto `dst` by the normalized direct linear
/// transform. `None` for fewer than four matches or a degenerate
/// configuration.
pub fn fit_homography(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Option<Matrix3<f64>> {
    if src.len() != dst.len() || src.len() < 4 {
        return None;
    }
    let (t1, t2) = (hartley(src)?, hartley(dst)?);
    let rows = (2 * src.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (p, q)) in src.iter().zip(dst).enumerate() {
        let x = t1 * Vector3::new(p[0], p[1], 1.0);
        let y = t2 * Vector3::new(q[0], q[1], 1.0);
        let (u, v) = (y.x, y.y);
        for c in 0..3 {
            a[(2 * i, c)] = -x[c];
            a[(2 * i, 6 + c)] = u * x[c];
            a[(2 * i + 1, 3 + c)] = -x[c];
            a[(2 * i + 1, 6 + c)] = v * x[c];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    // A unique solution needs a one-dimensional null space.
    if sv[order[1]] <= 1e-9 * sv[order[8]] {
        return None;
    }
    let hv = vt.row(order[0]);
    let hn = Matrix3::from_row_slice(&hv.iter().copied().collect::<Vec<_>>());
    let h = t2.try_inverse()? * hn * t1;
    if !h.iter().all(|v| v.is_finite()) || h[(2, 2)].abs() < 1e-12 * h.norm() {
        return None;
    }
    Some(h / h[(2, 2)])
}

/// Smaller over larger singular value of the homography's affine block.
pub fn anisotropy(h: &Matrix3<f64>) -> Option<f64> {
    let h = h / h[(2, 2)];
    let a = h.fixed_view::<2, 2>(0, 0).into_owned();
    let sv = a.singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    (hi > 0.0 && lo.is_finite()).then_some(lo / hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistortionReport {
    /// Worst (smallest) per-frame value.
    pub value: f64,
    pub per_frame: Vec<Option<f64>>,
    /// Frames whose fit was degenerate.
    pub skipped: Vec<usize>,
}

pub fn distortion(matches: &[FrameMatches]) -> Result<DistortionReport> {
    let per_frame: Vec<Option<f64>> = matches
        .par_iter()
        .map(|m| fit_homography(&m.src, &m.dst).and_then(|h| anisotropy(&h)))
        .collect();
    let skipped: Vec<usize> = per_frame.iter().enumerate().filter(|(_, d)| d.is_none()).map(|(i, _)| i).collect();
    let value = per_frame.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if !value.is_finite() {
        return Err(Error::TooFewCorrespondences { needed: 4, available: 0 });
    }
    Ok(DistortionReport { value, per_frame, skipped })
}

/// Low-frequency energy share of one signal, `None` when there is no
/// residual energy at all.
fn low_frequency_share(signal: &[f64], planner: &mut FftPlanner<f64>) -> Option<f64> {
    let n = signal.len();
    let nf = n as f64;
    let tm = (nf - 1.0) / 2.0;
    let sm = signal.iter().sum::<f64>() / nf;
    let (mut num, mut den) = (0.0, 0.0);
    for (t, s) in signal.iter().enumerate() {
        num += (t as f64 - tm) * (s - sm);
        den += (t as f64 - tm).powi(2);
    }
    let slope = num / den;
    let mut buf: Vec<Complex<f64>> = signal
        .iter()
        .enumerate()
        .map(|(t, s)| Complex::new(s - sm - slope * (t as f64 - tm), 0.0))
        .collect();
    let scale = signal.iter().map(|s| s * s).sum::<f64>() + 1.0;
    planner.plan_fft_forward(n).process(&mut buf);
    let energy = |r: std::ops::RangeInclusive<usize>| r.map(|k| buf[k].norm_sqr()).sum::<f64>();
    let total = energy(2..=n / 2);
    if total <= 1e-24 * scale * nf {
        return None;
    }
    Some(energy(STABILITY_LOW_BINS) / total)
}

/// Mean low-frequency energy share over every axis of every visible run of
/// at least [`MIN_TRACK_FRAMES`] frames. Linear motion scores 1.
pub fn stability(tracks: &TrackSet) -> Result<f64> {
    let mut signals: Vec<Vec<f64>> = Vec::new();
    for t in &tracks.tracks {
        let mut run: Vec<[f64; 2]> = Vec::new();
        for p in t.points.iter().chain(std::iter::once(&None)) {
            match p {
                Some(q) => run.push(*q),
                None => {
                    if run.len() >= MIN_TRACK_FRAMES {
                        signals.push(run.iter().map(|q| q[0]).collect());
                        signals.push(run.iter().map(|q| q[1]).collect());
                    }
                    run.clear();
                }
            }
        }
    }
    signal_stability(&signals)
}

/// [`stability`] of the camera centre path, one signal per axis.
pub fn trajectory_stability(poses: &[Pose]) -> Result<f64> {
    let signals: Vec<Vec<f64>> = (0..3).map(|c| poses.iter().map(|p| p.translation[c]).collect()).collect();
    signal_stability(&signals)
}

fn signal_stability(signals: &[Vec<f64>]) -> Result<f64> {
    if signals.is_empty() {
        return Err(Error::invalid(format!("no track spans {MIN_TRACK_FRAMES} frames")));
    }
    if let Some(s) = signals.iter().find(|s| s.len() < MIN_TRACK_FRAMES) {
        return Err(Error::invalid(format!("signal of {} frames is shorter than {MIN_TRACK_FRAMES}", s.len())));
    }
    if signals.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite track coordinates"));
    }
    let shares: Vec<f64> = signals
        .par_iter()
        .map_init(FftPlanner::new, |planner, s| low_frequency_share(s, planner).unwrap_or(1.0))
        .collect();
    Ok((shares.iter().sum::<f64>() / shares.len() as f64).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame: usize,
    pub point: usize,
    pub uv: [f64; 2],
}

/// Triangulated points and their 2D observations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Correspondences {
    pub points: Vec<[f64; 3]>,
    pub observations: Vec<Observation>,
}

impl Correspondences {
    /// Exact observations of every visible point of `set`.
    pub fn from_sparse(set: &SparsePointSet, k: &CameraIntrinsics, poses: &[Pose]) -> Self {
        let mut observations = Vec::new();
        for (&frame, idx) in &set.visibility {
            let Some(pose) = poses.get(frame) else { continue };
            for &i in idx {
                let pr = project_point(&set.points[i], k, pose);
                if pr.valid {
                    observations.push(Observation { frame, point: i, uv: [pr.pixel.x, pr.pixel.y] });
                }
            }
        }
        Correspondences { points: set.points.iter().map(|p| [p.x, p.y, p.z]).collect(), observations }
    }
}

/// Mean reprojection error of the observations under `poses`.
pub fn gc_sparse(c: &Correspondences, k: &CameraIntrinsics, poses: &[Pose]) -> Result<f64> {
    if c.observations.is_empty() {
        return Err(Error::invalid("no observations"));
    }
    let mut sum = 0.0;
    for (n, o) in c.observations.iter().enumerate() {
        let (Some(p), Some(pose)) = (c.points.get(o.point), poses.get(o.frame)) else {
            return Err(Error::invalid(format!("observation {n} references a missing point or frame")));
        };
        let pr = project_point(&Vector3::from(*p), k, pose);
        if !pr.valid {
            return Err(Error::invalid(format!("observation {n}: point behind the camera")));
        }
        sum += (pr.pixel - Vector2::from(o.uv)).norm();
    }
    Ok(sum / c.observations.len() as f64)
}

pub fn holdout_frames(len: usize, interval: usize) -> Vec<usize> {
    (0..len).step_by(interval.max(1)).collect()
}

/// The two kept frames closest to `i` (earlier frame first on ties).
pub fn nearest_kept(i: usize, len: usize, interval: usize) -> Vec<usize> {
    let mut kept: Vec<usize> = (0..len).filter(|j| j % interval != 0).collect();
    kept.sort_by_key(|&j| (j.abs_diff(i), j));
    kept.truncate(2);
    kept.sort_unstable();
    kept
}

/// Mean PSNR of held-out frames predicted from the two nearest kept
/// scenes rendered at the held-out pose, over static pixels. Frames `0`,
/// `interval`, `2·interval`, ... are held out.
pub fn gc_dense(
    targets: &[Image],
    poses: &[Pose],
    scenes: &[&[GaussianPrimitive]],
    k: &CameraIntrinsics,
    dynamic: Option<&[Mask]>,
    interval: usize,
) -> Result<f64> {
    let n = targets.len();
    if n < MIN_GC_DENSE_FRAMES {
        return Err(Error::invalid(format!("dense consistency needs {MIN_GC_DENSE_FRAMES} frames, got {n}")));
    }
    if interval < 2 {
        return Err(Error::invalid("holdout interval must be at least 2"));
    }
    if poses.len() != n || scenes.len() != n || dynamic.is_some_and(|d| d.len() != n) {
        return Err(Error::invalid("frames, poses, scenes and masks differ in length"));
    }
    for t in targets {
        t.ensure_dims(k.dims())?;
    }
    let scores: Vec<Result<f64>> = holdout_frames(n, interval)
        .into_par_iter()
        .map(|i| {
            let renders: Vec<Image> = nearest_kept(i, n, interval).iter().map(|&j| render_primitives(scenes[j], k, &poses[i]).color).collect();
            let pred = Grid::from_fn(k.width, k.height, |x, y| {
                let (a, b) = (renders[0].get(x, y), renders[1].get(x, y));
                std::array::from_fn(|c| 0.5 * (a[c] + b[c]))
            });
            let static_mask = dynamic.map(|d| d[i].map(|m| !m));
            masked_psnr(&pred, &targets[i], static_mask.as_ref())
        })
        .collect();
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn masked_psnr(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    b.ensure_dims(a.dims())?;
    for (i, (pa, pb)) in a.iter().zip(b.iter()).enumerate() {
        if mask.is_some_and(|m| !m.as_slice()[i]) {
            continue;
        }
        sum += (0..3).map(|c| (pa[c] - pb[c]).powi(2)).sum::<f64>();
        count += 3;
    }
    if count == 0 {
        return Err(Error::invalid("no static pixels in a held-out frame"));
    }
    Ok(psnr_from_mse(sum / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn border_mask(w: usize, h: usize, b: usize) -> Mask {
        Grid::from_fn(w, h, |x, y| x >= b && y >= b && x < w - b && y < h - b)
    }

    fn brute_rectangle(m: &Mask) -> usize {
        let (w, h) = m.dims();
        let mut best = 0;
        for y0 in 0..h {
            for x0 in 0..w {
                for y1 in y0..h {
                    for x1 in x0..w {
                        if (y0..=y1).all(|y| (x0..=x1).all(|x| *m.get(x, y))) {
                            best = best.max((x1 - x0 + 1) * (y1 - y0 + 1));
                        }
                    }
                }
            }
        }
        best
    }

    #[test]
    fn cropping_ratio_fixtures() {
        assert_eq!(cropping_ratio(&[Grid::filled(30, 20, true)]).unwrap(), 1.0);
        let r = cropping_ratio(&[border_mask(100, 100, 10)]).unwrap();
        assert!((r - 0.64).abs() < 1e-12);
        let r = cropping_ratio(&[Grid::filled(10, 10, true), border_mask(10, 10, 1)]).unwrap();
        assert!((r - 0.82).abs() < 1e-12);
        assert!(cropping_ratio(&[]).is_err());
        assert!(cropping_ratio(&[Grid::filled(3, 3, true), Grid::filled(4, 3, true)]).is_err());
    }

    proptest! {
        #[test]
        fn largest_rectangle_matches_brute_force(bits in proptest::collection::vec(any::<bool>(), 42)) {
            let m = Grid::from_vec(7, 6, bits).unwrap();
            prop_assert_eq!(largest_rectangle(&m), brute_rectangle(&m));
        }

        #[test]
        fn cropping_ratio_ignores_translation(dx in 0usize..12, dy in 0usize..9) {
            let inner = Grid::from_fn(24, 20, |x, y| (2..10).contains(&x) && (3..9).contains(&y));
            let inner_moved = Grid::from_fn(24, 20, |x, y| (2 + dx..10 + dx).contains(&x) && (3 + dy..9 + dy).contains(&y));
            prop_assert_eq!(cropping_ratio(&[inner]).unwrap(), cropping_ratio(&[inner_moved]).unwrap());
        }
    }

    fn grid_points() -> Vec<[f64; 2]> {
        let mut v = Vec::new();
        for i in 0..5 {
            for j in 0..4 {
                v.push([10.0 + 17.0 * i as f64 + 0.3 * j as f64, 5.0 + 13.0 * j as f64]);
            }
        }
        v
    }

    fn warp(h: &Matrix3<f64>, pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
        pts.iter()
            .map(|p| {
                let q = h * Vector3::new(p[0], p[1], 1.0);
                [q.x / q.z, q.y / q.z]
            })
            .collect()
    }

    fn matches(h: &Matrix3<f64>) -> FrameMatches {
        let src = grid_points();
        FrameMatches { dst: warp(h, &src), src }
    }

    #[test]
    fn distortion_fixtures() {
        let id = distortion(&[matches(&Matrix3::identity())]).unwrap();
        assert!((id.value - 1.0).abs() < 1e-9);
        let aniso = Matrix3::new(2.0, 0.0, 3.0, 0.0, 1.0, -4.0, 0.0, 0.0, 1.0);
        assert!((distortion(&[matches(&aniso)]).unwrap().value - 0.5).abs() < 1e-9);
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let sim = Matrix3::new(1.7 * c, -1.7 * s, 5.0, 1.7 * s, 1.7 * c, 2.0, 0.0, 0.0, 1.0);
        assert!((distortion(&[matches(&sim)]).unwrap().value - 1.0).abs() < 1e-9);
        let both = distortion(&[matches(&sim), matches(&aniso)]).unwrap();
        assert!((both.value - 0.5).abs() < 1e-9);
        assert_eq!(both.per_frame.len(), 2);
    }

    #[test]
    fn projective_fit_is_exact() {
        let h = Matrix3::new(1.1, 0.05, 3.0, -0.02, 0.95, 1.0, 1e-4, -2e-4, 1.0);
        let fit = fit_homography(&grid_points(), &warp(&h, &grid_points())).unwrap();
        assert!((fit - h).norm() < 1e-8);
        let four = &grid_points()[..4];
        let four: Vec<[f64; 2]> = vec![four[0], four[3], grid_points()[16], grid_points()[19]];
        assert!(fit_homography(&four, &warp(&h, &four)).is_some());
    }

    #[test]
    fn degenerate_frames_are_skipped_and_flagged() {
        let few = FrameMatches { src: vec![[0.0, 0.0]; 3], dst: vec![[0.0, 0.0]; 3] };
        let line: Vec<[f64; 2]> = (0..8).map(|i| [i as f64, 2.0 * i as f64]).collect();
        let collinear = FrameMatches { src: line.clone(), dst: line };
        let good = matches(&Matrix3::identity());
        let r = distortion(&[few.clone(), good, collinear.clone()]).unwrap();
        assert_eq!(r.skipped, vec![0, 2]);
        assert!((r.value - 1.0).abs() < 1e-9);
        assert!(distortion(&[few, collinear]).is_err());
    }

    proptest! {
        #[test]
        fn distortion_ignores_relabeling_and_isotropic_scale(
            sx in 0.5f64..2.0, sy in 0.5f64..2.0, k in 0.2f64..5.0, seed in 0u64..1000,
        ) {
            let h = Matrix3::new(sx, 0.1, 2.0, -0.05, sy, 1.0, 0.0, 0.0, 1.0);
            let base = matches(&h);
            let d0 = distortion(&[base.clone()]).unwrap().value;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = (0..base.src.len()).collect();
            for i in (1..idx.len()).rev() {
                idx.swap(i, rng.random_range(0..=i));
            }
            let perm = FrameMatches {
                src: idx.iter().map(|&i| base.src[i]).collect(),
                dst: idx.iter().map(|&i| base.dst[i]).collect(),
            };
            let scaled = FrameMatches {
                src: base.src.iter().map(|p| [k * p[0], k * p[1]]).collect(),
                dst: base.dst.iter().map(|p| [k * p[0], k * p[1]]).collect(),
            };
            prop_assert!((distortion(&[perm]).unwrap().value - d0).abs() < 1e-9);
            prop_assert!((distortion(&[scaled]).unwrap().value - d0).abs() < 1e-9);
            prop_assert!(d0 > 0.0 && d0 <= 1.0);
        }
    }

    fn track(xs: &[f64], ys: &[f64]) -> Track {
        Track { points: xs.iter().zip(ys).map(|(&x, &y)| Some([x, y])).collect() }
    }

    #[test]
    fn linear_tracks_score_one() {
        let xs: Vec<f64> = (0..64).map(|t| 3.0 + 0.7 * t as f64).collect();
        let ys: Vec<f64> = (0..64).map(|t| 10.0 - 0.2 * t as f64).collect();
        let s = stability(&TrackSet { tracks: vec![track(&xs, &ys)] }).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn single_low_bin_sinusoid_scores_one() {
        let n = 128;
        let xs: Vec<f64> = (0..n).map(|t| (2.0 * std::f64::consts::PI * 3.0 * t as f64 / n as f64).sin()).collect();
        let ys: Vec<f64> = (0..n).map(|t| 5.0 + (2.0 * std::f64::consts::PI * 3.0 * t as f64 / n as f64).cos()).collect();
        let s = stability(&TrackSet { tracks: vec![track(&xs, &ys)] }).unwrap();
        // Removing the least-squares trend leaks under 1% of a sine's energy.
        assert!(s > 0.99, "{s}");
        let hi: Vec<f64> = (0..n).map(|t| (2.0 * std::f64::consts::PI * 40.0 * t as f64 / n as f64).cos()).collect();
        let s = stability(&TrackSet { tracks: vec![track(&hi, &hi)] }).unwrap();
        assert!(s < 1e-3, "{s}");
    }

    #[test]
    fn white_noise_matches_flat_spectrum() {
        let n = 128;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let tracks = (0..400)
            .map(|_| {
                let xs: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
                let ys: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
                track(&xs, &ys)
            })
            .collect();
        let s = stability(&TrackSet { tracks }).unwrap();
        let expected = 5.0 / (n as f64 / 2.0 - 1.0);
        assert!((s - expected).abs() < 0.01, "{s} vs {expected}");
    }

    #[test]
    fn short_runs_are_excluded() {
        let mut pts: Vec<Option<[f64; 2]>> = (0..40).map(|t| Some([t as f64, 0.0])).collect();
        pts[20] = None;
        assert!(stability(&TrackSet { tracks: vec![Track { points: pts.clone() }] }).is_err());
        let noisy: Vec<Option<[f64; 2]>> = (0..40).map(|t| Some([(t * 7919 % 13) as f64, 1.0])).collect();
        let s_both = stability(&TrackSet { tracks: vec![Track { points: pts }, Track { points: noisy.clone() }] }).unwrap();
        let s_noisy = stability(&TrackSet { tracks: vec![Track { points: noisy }] }).unwrap();
        assert_eq!(s_both, s_noisy);
    }

    proptest! {
        #[test]
        fn stability_ignores_translation(seed in 0u64..500, dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..48).map(|t| t as f64 + rng.random_range(-1.0..1.0)).collect();
            let ys: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = stability(&TrackSet { tracks: vec![track(&xs, &ys)] }).unwrap();
            let xs2: Vec<f64> = xs.iter().map(|x| x + dx).collect();
            let ys2: Vec<f64> = ys.iter().map(|y| y + dy).collect();
            let b = stability(&TrackSet { tracks: vec![track(&xs2, &ys2)] }).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn track_json_format() {
        let ts: TrackSet = serde_json::from_str("[{\"points\": [[1.0, 2.0], null, [3.5, 4.0]]}]").unwrap();
        assert_eq!(ts.tracks[0].points, vec![Some([1.0, 2.0]), None, Some([3.5, 4.0])]);
        ts.validate().unwrap();
        let one: TrackSet = serde_json::from_str("[{\"points\": [[1.0, 2.0], null]}]").unwrap();
        assert!(one.validate().is_err());
        assert_eq!(serde_json::to_string(&ts).unwrap(), "[{\"points\":[[1.0,2.0],null,[3.5,4.0]]}]");
    }

    fn sparse_fixture() -> (Correspondences, CameraIntrinsics, Vec<Pose>) {
        let k = CameraIntrinsics::new(50.0, 50.0, 32.0, 24.0, 64, 48).unwrap();
        let poses: Vec<Pose> = (0..5).map(|i| Pose::from_translation(0.1 * i as f64, 0.0, 0.0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<Vector3<f64>> = (0..60)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(3.0..6.0)))
            .collect();
        let vis = (0..5).map(|f| (f, (0..60).collect())).collect();
        let set = SparsePointSet::new(points, vis).unwrap();
        (Correspondences::from_sparse(&set, &k, &poses), k, poses)
    }

    fn perturbed(c: &Correspondences, sigma: f64, seed: u64) -> Correspondences {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut out = c.clone();
        for o in &mut out.observations {
            o.uv[0] += normal.sample(&mut rng);
            o.uv[1] += normal.sample(&mut rng);
        }
        out
    }

    #[test]
    fn gc_sparse_fixtures() {
        let (c, k, poses) = sparse_fixture();
        assert!(gc_sparse(&c, &k, &poses).unwrap() < 1e-12);
        let big = Correspondences {
            observations: (0..40).flat_map(|s| perturbed(&c, 0.5, s).observations).collect(),
            points: c.points.clone(),
        };
        let e = gc_sparse(&big, &k, &poses).unwrap();
        let rayleigh = 0.5 * (std::f64::consts::PI / 2.0).sqrt();
        assert!((e - rayleigh).abs() < 0.01, "{e} vs {rayleigh}");
        let empty = Correspondences { points: c.points.clone(), observations: vec![] };
        assert!(gc_sparse(&empty, &k, &poses).unwrap_err().to_string().contains("no observations"));
        let mut bad = c.clone();
        bad.observations[0].point = 999;
        assert!(gc_sparse(&bad, &k, &poses).is_err());
    }

    #[test]
    fn gc_sparse_grows_with_noise() {
        let (c, k, poses) = sparse_fixture();
        let mut last = gc_sparse(&c, &k, &poses).unwrap();
        for sigma in [0.1, 0.3, 0.9, 2.7] {
            let e: f64 = (0..5).map(|s| gc_sparse(&perturbed(&c, sigma, s), &k, &poses).unwrap()).sum::<f64>() / 5.0;
            assert!(e > last, "{sigma}: {e} <= {last}");
            last = e;
        }
    }

    #[test]
    fn holdout_selection() {
        assert_eq!(holdout_frames(17, 8), vec![0, 8, 16]);
        assert_eq!(nearest_kept(0, 17, 8), vec![1, 2]);
        assert_eq!(nearest_kept(8, 17, 8), vec![7, 9]);
        assert_eq!(nearest_kept(16, 17, 8), vec![14, 15]);
    }

    #[test]
    fn psnr_closed_form() {
        let a = Grid::filled(8, 8, [0.5; 3]);
        let b = Grid::filled(8, 8, [0.5 + 1.0 / 255.0; 3]);
        assert!((masked_psnr(&a, &b, None).unwrap() - 48.1308).abs() < 1e-3);
        assert_eq!(masked_psnr(&a, &a, None).unwrap(), 99.0);
        let none = Grid::filled(8, 8, false);
        assert!(masked_psnr(&a, &b, Some(&none)).is_err());
    }

    #[test]
    fn gc_dense_of_a_static_scene_is_high() {
        let spec = crate::synth::SceneSpec::textured_plane(
            CameraIntrinsics::new(20.0, 20.0, 12.0, 10.0, 24, 20).unwrap(),
            16,
            4.0,
        );
        let bundle = crate::synth::generate(&spec).unwrap();
        let scenes = crate::optimize::build_scenes(&bundle, &Default::default()).unwrap();
        let k = &bundle.intrinsics;
        let refs: Vec<&[GaussianPrimitive]> = scenes.iter().map(|s| s.primitives.as_slice()).collect();
        let psnr = gc_dense(&bundle.frames, &bundle.poses, &refs, k, None, HOLDOUT_INTERVAL).unwrap();
        assert!(psnr > 20.0, "{psnr}");
        // Exact predictions are capped.
        let same: Vec<&[GaussianPrimitive]> = vec![refs[0]; 16];
        let targets: Vec<Image> = (0..16).map(|i| render_primitives(same[0], k, &bundle.poses[i]).color).collect();
        assert_eq!(gc_dense(&targets, &bundle.poses, &same, k, None, 8).unwrap(), 99.0);
        assert!(gc_dense(&targets[..15], &bundle.poses[..15], &same[..15], k, None, 8).is_err());
    }

    #[test]
    fn projected_tracks_follow_visibility() {
        let k = CameraIntrinsics::new(10.0, 10.0, 5.0, 5.0, 11, 11).unwrap();
        let poses: Vec<Pose> = (0..4).map(|i| Pose::from_translation(i as f64, 0.0, 0.0)).collect();
        let ts = project_tracks(&[Vector3::new(0.0, 0.0, 10.0), Vector3::new(0.0, 0.0, -1.0)], &k, &poses);
        assert_eq!(ts.tracks.len(), 1);
        assert_eq!(ts.tracks[0].points.iter().flatten().count(), 4);
        assert_eq!(ts.tracks[0].points[0], Some([5.0, 5.0]));
    }
}
