//! Rolling-shutter and OIS removal from gyro and lens-shift logs.
//!
//! The target camera is the frame's mean gyro orientation with zero lens
//! shift. Each row block gets its own rotation-only homography into the
//! target; the resulting sparse mesh is triangulated into a dense sampling
//! field that pulls the stable frame out of the raw one.

use nalgebra::{UnitQuaternion, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_homography, rotation_homography, CameraIntrinsics};
use crate::grid::{bilinear_taps, Grid, Image, Mask};
use crate::trajectory::blend_rotations;

pub const DEFAULT_BLOCK_ROWS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GyroSample {
    pub t: f64,
    pub rotation: UnitQuaternion<f64>,
}

/// Camera orientation history (camera-to-world) from the gyroscope.
#[derive(Debug, Clone, PartialEq)]
pub struct GyroLog {
    samples: Vec<GyroSample>,
}

impl GyroLog {
    pub fn new(samples: Vec<GyroSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("gyro log is empty"));
        }
        if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::invalid("gyro timestamps must be strictly increasing"));
        }
        Ok(GyroLog { samples })
    }

    pub fn samples(&self) -> &[GyroSample] {
        &self.samples
    }

    pub fn time_range(&self) -> (f64, f64) {
        (self.samples[0].t, self.samples[self.samples.len() - 1].t)
    }
}

/// An interpolated value plus whether the query had to be clamped into the
/// log's time range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interpolated<T> {
    pub value: T,
    pub clamped: bool,
}

/// Slerp between the samples bracketing `t`; exact at sample times.
pub fn interpolate_rotation(log: &GyroLog, t: f64) -> Interpolated<UnitQuaternion<f64>> {
    let s = &log.samples;
    let (t0, t1) = log.time_range();
    if t <= t0 || t >= t1 {
        let value = if t <= t0 { s[0].rotation } else { s[s.len() - 1].rotation };
        return Interpolated {
            value,
            clamped: t < t0 || t > t1,
        };
    }
    let hi = s.partition_point(|x| x.t <= t);
    let (a, b) = (&s[hi - 1], &s[hi]);
    let f = (t - a.t) / (b.t - a.t);
    let value = if f == 0.0 {
        a.rotation
    } else {
        // Take the short arc.
        let bq = if a.rotation.coords.dot(&b.rotation.coords) < 0.0 {
            UnitQuaternion::new_unchecked(-b.rotation.into_inner())
        } else {
            b.rotation
        };
        a.rotation.try_slerp(&bq, f, 1e-12).unwrap_or(a.rotation)
    };
    Interpolated {
        value,
        clamped: false,
    }
}

/// Sign-aligned normalized average of all samples with `t0 <= t <= t1`.
pub fn mean_rotation(log: &GyroLog, t0: f64, t1: f64) -> Result<UnitQuaternion<f64>> {
    let inside: Vec<_> = log.samples.iter().filter(|s| s.t >= t0 && s.t <= t1).collect();
    let first = inside
        .first()
        .ok_or_else(|| Error::invalid(format!("no gyro samples in [{t0}, {t1}]")))?;
    let w = 1.0 / inside.len() as f64;
    Ok(blend_rotations(&first.rotation, inside.iter().map(|s| (s.rotation, w))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OisSample {
    pub t: f64,
    pub dx: f64,
    pub dy: f64,
}

/// Lens-shift history in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct OisLog {
    samples: Vec<OisSample>,
}

impl OisLog {
    pub fn new(samples: Vec<OisSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("OIS log is empty"));
        }
        if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::invalid("OIS timestamps must be strictly increasing"));
        }
        Ok(OisLog { samples })
    }

    /// A log that reports zero lens shift at all times.
    pub fn zero() -> Self {
        OisLog {
            samples: vec![OisSample { t: 0.0, dx: 0.0, dy: 0.0 }],
        }
    }

    pub fn samples(&self) -> &[OisSample] {
        &self.samples
    }

    /// Piecewise-linear offset, clamped at the ends.
    pub fn offset_at(&self, t: f64) -> Vector2<f64> {
        let s = &self.samples;
        let hi = s.partition_point(|x| x.t <= t);
        if hi == 0 {
            return Vector2::new(s[0].dx, s[0].dy);
        }
        if hi == s.len() {
            let l = &s[s.len() - 1];
            return Vector2::new(l.dx, l.dy);
        }
        let (a, b) = (&s[hi - 1], &s[hi]);
        let f = (t - a.t) / (b.t - a.t);
        Vector2::new(a.dx + f * (b.dx - a.dx), a.dy + f * (b.dy - a.dy))
    }
}

/// Linear readout model: row `r` of a frame of height `h` is exposed at
/// `frame_start + r · readout / h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowTiming {
    pub frame_start: f64,
    pub readout: f64,
}

impl RowTiming {
    #[inline]
    pub fn row_time(&self, row: f64, height: usize) -> f64 {
        self.frame_start + row * self.readout / height as f64
    }
}

/// Sparse correspondence mesh: vertex `(c, r)` sits at `src` in the raw frame
/// and at `dst` in the corrected frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpGrid {
    pub src: Grid<Vector2<f64>>,
    pub dst: Grid<Vector2<f64>>,
    pub block_rows: usize,
}

impl WarpGrid {
    /// Regular mesh with vertices every `step` pixels plus the last row and
    /// column, `dst` initialised to `src`.
    pub fn regular(width: usize, height: usize, step: usize) -> Result<Self> {
        if step == 0 || width == 0 || height == 0 {
            return Err(Error::invalid("grid step and frame size must be positive"));
        }
        let axis = |n: usize| {
            let mut v: Vec<f64> = (0..n).step_by(step).map(|i| i as f64).collect();
            if *v.last().unwrap() != (n - 1) as f64 {
                v.push((n - 1) as f64);
            }
            v
        };
        let (xs, ys) = (axis(width), axis(height));
        let src = Grid::from_fn(xs.len(), ys.len(), |c, r| Vector2::new(xs[c], ys[r]));
        Ok(WarpGrid {
            dst: src.clone(),
            src,
            block_rows: step,
        })
    }
}

/// Per-pixel sampling offsets: output pixel `p` reads the source at `p + disp(p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpField {
    pub disp: Grid<Vector2<f64>>,
    pub valid: Mask,
}

/// Rasterizes the destination mesh (each cell split along its main
/// diagonal) and interpolates the vertex offsets `src - dst` barycentrically.
/// Pixels not covered by any triangle are invalid.
pub fn dense_warp_from_grid(grid: &WarpGrid, out_size: (usize, usize)) -> Result<WarpField> {
    grid.dst.ensure_dims(grid.src.dims())?;
    let (w, h) = out_size;
    let mut disp = Grid::filled(w, h, Vector2::zeros());
    let mut valid = Grid::filled(w, h, false);
    let (gc, gr) = grid.src.dims();
    for r in 0..gr.saturating_sub(1) {
        for c in 0..gc.saturating_sub(1) {
            let corners = [(c, r), (c + 1, r), (c + 1, r + 1), (c, r + 1)];
            for tri in [[0, 1, 2], [0, 2, 3]] {
                let v: [(Vector2<f64>, Vector2<f64>); 3] = tri.map(|i| {
                    let (x, y) = corners[i];
                    let d = *grid.dst.get(x, y);
                    (d, *grid.src.get(x, y) - d)
                });
                fill_triangle(&v, &mut disp, &mut valid);
            }
        }
    }
    Ok(WarpField { disp, valid })
}

fn fill_triangle(v: &[(Vector2<f64>, Vector2<f64>); 3], disp: &mut Grid<Vector2<f64>>, valid: &mut Mask) {
    const EPS: f64 = 1e-7;
    let (p0, p1, p2) = (v[0].0, v[1].0, v[2].0);
    let area = (p1 - p0).perp(&(p2 - p0));
    if area.abs() < 1e-12 {
        return;
    }
    let lo_x = (p0.x.min(p1.x).min(p2.x) - EPS).ceil().max(0.0);
    let hi_x = (p0.x.max(p1.x).max(p2.x) + EPS).floor().min(disp.width() as f64 - 1.0);
    let lo_y = (p0.y.min(p1.y).min(p2.y) - EPS).ceil().max(0.0);
    let hi_y = (p0.y.max(p1.y).max(p2.y) + EPS).floor().min(disp.height() as f64 - 1.0);
    if lo_x > hi_x || lo_y > hi_y {
        return;
    }
    for y in lo_y as usize..=hi_y as usize {
        for x in lo_x as usize..=hi_x as usize {
            if *valid.get(x, y) {
                continue;
            }
            let p = Vector2::new(x as f64, y as f64);
            let b0 = (p1 - p).perp(&(p2 - p)) / area;
            let b1 = (p2 - p).perp(&(p0 - p)) / area;
            let b2 = 1.0 - b0 - b1;
            if b0 < -EPS || b1 < -EPS || b2 < -EPS {
                continue;
            }
            disp.set(x, y, v[0].1 * b0 + v[1].1 * b1 + v[2].1 * b2);
            valid.set(x, y, true);
        }
    }
}

/// Bilinear pull of `image` at `p + disp(p)`; out-of-bounds or invalid field
/// pixels come back black and masked out.
pub fn grid_sample(image: &Image, field: &WarpField) -> Result<(Image, Mask)> {
    field.disp.ensure_dims(image.dims())?;
    let (w, h) = image.dims();
    let mut out = Image::filled(w, h, [0.0; 3]);
    let mut mask = Mask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if !*field.valid.get(x, y) {
                continue;
            }
            let d = field.disp.get(x, y);
            let (sx, sy) = (x as f64 + d.x, y as f64 + d.y);
            // Exact lattice hits read the pixel directly.
            let value = if d.x == 0.0 && d.y == 0.0 {
                Some(*image.get(x, y))
            } else {
                bilinear_taps(w, h, sx, sy).map(|taps| {
                    let mut o = [0.0; 3];
                    for (ix, iy, wt) in taps {
                        let p = image.get(ix, iy);
                        for c in 0..3 {
                            o[c] += wt * p[c];
                        }
                    }
                    o
                })
            };
            if let Some(v) = value {
                out.set(x, y, v);
                mask.set(x, y, true);
            }
        }
    }
    Ok((out, mask))
}

#[derive(Debug, Clone)]
pub struct RsCorrection {
    pub image: Image,
    /// False where the corrected frame has no source content.
    pub mask: Mask,
    pub grid: WarpGrid,
    pub target_rotation: UnitQuaternion<f64>,
}

/// Target orientation for a frame: mean of the gyro samples inside the
/// readout window, or the mid-readout orientation when none fall inside.
pub fn frame_target_rotation(gyro: &GyroLog, timing: &RowTiming, height: usize) -> UnitQuaternion<f64> {
    let (t0, t1) = (timing.row_time(0.0, height), timing.row_time(height as f64, height));
    mean_rotation(gyro, t0, t1).unwrap_or_else(|_| interpolate_rotation(gyro, 0.5 * (t0 + t1)).value)
}

/// Builds the raw→corrected vertex mesh for one frame.
pub fn rs_grid(
    k: &CameraIntrinsics,
    gyro: &GyroLog,
    ois: &OisLog,
    timing: &RowTiming,
    block_rows: usize,
    target: &UnitQuaternion<f64>,
) -> Result<WarpGrid> {
    let mut grid = WarpGrid::regular(k.width, k.height, block_rows)?;
    let (gc, gr) = grid.src.dims();
    for r in 0..gr {
        let row = grid.src.get(0, r).y;
        let t = timing.row_time(row, k.height);
        let src_rot = interpolate_rotation(gyro, t).value;
        let off = ois.offset_at(t);
        // Rows already at the target orientation map onto themselves exactly,
        // so static logs leave the frame bit-identical.
        if off == Vector2::zeros() && target.angle_to(&src_rot) < 1e-12 {
            continue;
        }
        let h = rotation_homography(k, target, &src_rot, &k.shifted(off.x, off.y));
        if !(h.determinant().abs() > 1e-12) {
            return Err(Error::Numerical(format!("degenerate homography for row block at row {row}")));
        }
        for c in 0..gc {
            let s = grid.src.get(c, r);
            let d = apply_homography(&h, s.x, s.y)
                .ok_or_else(|| Error::Numerical(format!("homography maps row {row} to infinity")))?;
            grid.dst.set(c, r, d);
        }
    }
    Ok(grid)
}

/// Removes rolling-shutter and OIS motion from one frame.
pub fn rs_remove_frame(
    frame: &Image,
    k: &CameraIntrinsics,
    gyro: &GyroLog,
    ois: &OisLog,
    timing: &RowTiming,
    block_rows: usize,
) -> Result<RsCorrection> {
    frame.ensure_dims(k.dims())?;
    let target = frame_target_rotation(gyro, timing, k.height);
    let grid = rs_grid(k, gyro, ois, timing, block_rows, &target)?;
    let field = dense_warp_from_grid(&grid, frame.dims())?;
    let (image, mask) = grid_sample(frame, &field)?;
    Ok(RsCorrection {
        image,
        mask,
        grid,
        target_rotation: target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn yaw(deg: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::y_axis(), deg.to_radians())
    }

    fn log(samples: &[(f64, UnitQuaternion<f64>)]) -> GyroLog {
        GyroLog::new(samples.iter().map(|&(t, rotation)| GyroSample { t, rotation }).collect()).unwrap()
    }

    #[test]
    fn interpolation_exact_at_samples_and_midway() {
        let g = log(&[(0.0, UnitQuaternion::identity()), (1.0, yaw(10.0))]);
        assert_eq!(interpolate_rotation(&g, 1.0).value, yaw(10.0));
        let mid = interpolate_rotation(&g, 0.5);
        assert!(!mid.clamped);
        assert!(mid.value.angle_to(&yaw(5.0)) < 1e-6);
        let out = interpolate_rotation(&g, 2.0);
        assert!(out.clamped);
        assert_eq!(out.value, yaw(10.0));
    }

    #[test]
    fn constant_log_interpolates_constant() {
        let q = yaw(3.0);
        let g = log(&[(0.0, q), (0.1, q), (0.3, q)]);
        for t in [0.0, 0.05, 0.17, 0.3] {
            assert!(interpolate_rotation(&g, t).value.angle_to(&q) < 1e-12);
        }
    }

    #[test]
    fn mean_rotation_cases() {
        let g = log(&[(0.0, yaw(2.0))]);
        assert!(mean_rotation(&g, -1.0, 1.0).unwrap().angle_to(&yaw(2.0)) < 1e-12);
        let g = log(&[(0.0, yaw(4.0)), (1.0, yaw(4.0))]);
        assert!(mean_rotation(&g, 0.0, 1.0).unwrap().angle_to(&yaw(4.0)) < 1e-12);
        let g = log(&[(0.0, UnitQuaternion::identity()), (1.0, yaw(10.0))]);
        assert!(mean_rotation(&g, 0.0, 1.0).unwrap().angle_to(&yaw(5.0)) < 1e-9);
        assert!(mean_rotation(&g, 2.0, 3.0).is_err());
    }

    #[test]
    fn non_increasing_timestamps_rejected() {
        assert!(GyroLog::new(vec![
            GyroSample { t: 1.0, rotation: yaw(0.0) },
            GyroSample { t: 1.0, rotation: yaw(0.0) },
        ])
        .is_err());
    }

    #[test]
    fn identical_grids_give_zero_field() {
        let g = WarpGrid::regular(20, 15, 4).unwrap();
        let f = dense_warp_from_grid(&g, (20, 15)).unwrap();
        assert_eq!(f.valid.count(), 300);
        assert!(f.disp.iter().all(|d| *d == Vector2::zeros()));
    }

    #[test]
    fn uniform_vertex_offset_gives_constant_field() {
        let mut g = WarpGrid::regular(9, 9, 8).unwrap();
        for v in g.dst.as_mut_slice() {
            *v -= Vector2::new(3.0, 0.0);
        }
        // dst moved left by 3: covered pixels read 3 px to the right.
        let f = dense_warp_from_grid(&g, (9, 9)).unwrap();
        for (x, _, d) in f.disp.enumerate() {
            if x <= 5 {
                assert!((d - Vector2::new(3.0, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn midpoint_of_stretched_cell() {
        // Left corners carry offset 0, right corners offset 4; the cell
        // centre lies on the split diagonal, halfway between.
        let mut g = WarpGrid::regular(9, 9, 8).unwrap();
        g.dst.set(1, 0, Vector2::new(4.0, 0.0));
        g.dst.set(1, 1, Vector2::new(4.0, 8.0));
        for (c, r) in [(1, 0), (1, 1)] {
            g.src.set(c, r, Vector2::new(8.0, r as f64 * 8.0));
        }
        let f = dense_warp_from_grid(&g, (9, 9)).unwrap();
        assert!(*f.valid.get(2, 4));
        assert!((f.disp.get(2, 4) - Vector2::new(2.0, 0.0)).norm() < 1e-12);
        assert!(!*f.valid.get(6, 4));
    }

    #[test]
    fn grid_sample_ramp_and_outside() {
        let img = Image::from_fn(10, 4, |x, _| [x as f64, 0.0, 0.0]);
        let field = WarpField {
            disp: Grid::filled(10, 4, Vector2::new(1.0, 0.0)),
            valid: Grid::filled(10, 4, true),
        };
        let (out, mask) = grid_sample(&img, &field).unwrap();
        for y in 0..4 {
            for x in 0..9 {
                assert!((out.get(x, y)[0] - (x as f64 + 1.0)).abs() < 1e-12);
            }
            assert!(!*mask.get(9, y));
        }
        let zero = WarpField {
            disp: Grid::filled(10, 4, Vector2::zeros()),
            valid: Grid::filled(10, 4, true),
        };
        assert_eq!(grid_sample(&img, &zero).unwrap().0, img);
    }

    fn test_camera() -> CameraIntrinsics {
        CameraIntrinsics::new(60.0, 60.0, 31.5, 23.5, 64, 48).unwrap()
    }

    fn textured(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64, y as f64);
            [0.5 + 0.4 * (0.3 * x).sin(), 0.5 + 0.4 * (0.21 * y).cos(), 0.5 + 0.3 * (0.1 * (x + y)).sin()]
        })
    }

    #[test]
    fn static_gyro_zero_ois_is_identity() {
        let k = test_camera();
        let g = log(&[(0.0, yaw(1.5)), (1.0, yaw(1.5))]);
        let img = textured(64, 48);
        let timing = RowTiming { frame_start: 0.1, readout: 0.03 };
        let out = rs_remove_frame(&img, &k, &g, &OisLog::zero(), &timing, DEFAULT_BLOCK_ROWS).unwrap();
        assert_eq!(out.mask.count(), 64 * 48);
        assert_eq!(out.image, img);
    }

    #[test]
    fn constant_ois_shift_translates_output() {
        let k = test_camera();
        let g = log(&[(0.0, UnitQuaternion::identity()), (1.0, UnitQuaternion::identity())]);
        let ois = OisLog::new(vec![OisSample { t: 0.0, dx: 5.0, dy: 0.0 }]).unwrap();
        let img = textured(64, 48);
        let timing = RowTiming { frame_start: 0.0, readout: 0.03 };
        let out = rs_remove_frame(&img, &k, &g, &ois, &timing, 16).unwrap();
        // Content moves 5 px left: out(x) = in(x + 5).
        for y in 0..48 {
            for x in 0..59 {
                assert!(*out.mask.get(x, y));
                let (a, b) = (out.image.get(x, y), img.get(x + 5, y));
                assert!((a[0] - b[0]).abs() < 1e-9, "({x},{y})");
            }
            assert!(!*out.mask.get(62, y));
        }
    }

    #[test]
    fn dense_field_exact_at_vertices() {
        let k = test_camera();
        let g = log(&[(0.0, yaw(-1.0)), (0.05, yaw(2.0))]);
        let timing = RowTiming { frame_start: 0.0, readout: 0.04 };
        let target = frame_target_rotation(&g, &timing, k.height);
        let grid = rs_grid(&k, &g, &OisLog::zero(), &timing, 8, &target).unwrap();
        let field = dense_warp_from_grid(&grid, (k.width, k.height)).unwrap();
        // At an integer-aligned destination vertex the field equals src - dst.
        let mut checked = 0;
        for (c, r, d) in grid.dst.enumerate() {
            if (d.x - d.x.round()).abs() < 1e-12 && (d.y - d.y.round()).abs() < 1e-12 {
                let (x, y) = (d.x.round() as usize, d.y.round() as usize);
                if x < k.width && y < k.height {
                    assert!((field.disp.get(x, y) - (grid.src.get(c, r) - d)).norm() < 1e-9);
                    checked += 1;
                }
            }
        }
        // Every vertex displacement satisfies the homography directly.
        for (c, r, s) in grid.src.enumerate() {
            let t = timing.row_time(s.y, k.height);
            let h = rotation_homography(&k, &target, &interpolate_rotation(&g, t).value, &k);
            let p = apply_homography(&h, s.x, s.y).unwrap();
            assert_eq!(p, *grid.dst.get(c, r));
        }
        let _ = checked;
    }

    #[test]
    fn grid_displacements_scale_with_resolution() {
        let k = test_camera();
        let k2 = k.scaled(2);
        // Scaled intrinsics keep the principal point on the doubled lattice
        // only when cx, cy are integers.
        let k = CameraIntrinsics { cx: 32.0, cy: 24.0, ..k };
        let k2 = CameraIntrinsics { cx: 64.0, cy: 48.0, ..k2 };
        let g = log(&[(0.0, yaw(-2.0)), (0.04, yaw(3.0))]);
        let timing = RowTiming { frame_start: 0.0, readout: 0.04 };
        let t1 = frame_target_rotation(&g, &timing, k.height);
        let t2 = frame_target_rotation(&g, &timing, k2.height);
        let lo = rs_grid(&k, &g, &OisLog::zero(), &timing, 8, &t1).unwrap();
        let hi = rs_grid(&k2, &g, &OisLog::zero(), &timing, 16, &t2).unwrap();
        let (gc, gr) = lo.src.dims();
        for r in 0..gr - 1 {
            for c in 0..gc - 1 {
                let d_lo = lo.dst.get(c, r) - lo.src.get(c, r);
                let d_hi = hi.dst.get(c, r) - hi.src.get(c, r);
                assert!((d_hi - 2.0 * d_lo).norm() <= 1e-6 * d_hi.norm().max(1.0));
            }
        }
    }
}
