//! Flow decomposition and dynamic-object compensation.
//!
//! Flow `F_{a→b}` lives on frame `a`'s pixel grid and points to where each
//! pixel moves in frame `b`. Camera flow is derived from depth and poses;
//! object flow is what remains of the total flow once camera flow is removed.

use nalgebra::Vector2;

use crate::error::Result;
use crate::geometry::{project_point, unproject, CameraIntrinsics, DepthMap, Pose};
use crate::grid::{bilinear_taps, Grid, Image, Mask};

/// Minimum accumulated splat weight for a destination pixel to count as covered.
pub const SPLAT_MIN_WEIGHT: f64 = 0.25;
pub const CONSISTENCY_ABS_TOL: f64 = 1.0;
pub const CONSISTENCY_REL_TOL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub disp: Grid<Vector2<f64>>,
    pub valid: Mask,
    /// Splat accumulation weight; 1 for directly computed fields.
    pub weight: Grid<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            disp: Grid::filled(width, height, Vector2::zeros()),
            valid: Grid::filled(width, height, true),
            weight: Grid::filled(width, height, 1.0),
        }
    }

    pub fn uniform(width: usize, height: usize, d: Vector2<f64>) -> Self {
        FlowField {
            disp: Grid::filled(width, height, d),
            ..FlowField::zeros(width, height)
        }
    }

    /// Wraps displacements with an explicit validity mask.
    pub fn from_parts(disp: Grid<Vector2<f64>>, valid: Mask) -> Result<Self> {
        valid.ensure_dims(disp.dims())?;
        let weight = valid.map(|&v| if v { 1.0 } else { 0.0 });
        Ok(FlowField { disp, valid, weight })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.disp.dims()
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Option<Vector2<f64>> {
        if *self.valid.get(x, y) {
            Some(*self.disp.get(x, y))
        } else {
            None
        }
    }

    /// Bilinear lookup requiring every tap with non-zero weight to be valid.
    pub fn sample(&self, x: f64, y: f64) -> Option<Vector2<f64>> {
        let (w, h) = self.dims();
        let taps = bilinear_taps(w, h, x, y)?;
        let mut out = Vector2::zeros();
        for (ix, iy, wt) in taps {
            if wt == 0.0 {
                continue;
            }
            out += self.at(ix, iy)? * wt;
        }
        Some(out)
    }

    pub fn negated(&self) -> Self {
        FlowField {
            disp: self.disp.map(|d| -d),
            ..self.clone()
        }
    }

    /// Same field with extra pixels invalidated.
    pub fn restricted(&self, mask: &Mask) -> Result<Self> {
        let valid = self.valid.and(mask)?;
        Ok(FlowField { valid, ..self.clone() })
    }

    /// Mean displacement magnitude over valid pixels; `None` if none are valid.
    pub fn mean_magnitude(&self) -> Option<f64> {
        let (s, n) = self
            .disp
            .iter()
            .zip(self.valid.iter())
            .filter(|(_, &v)| v)
            .fold((0.0, 0usize), |(s, n), (d, _)| (s + d.norm(), n + 1));
        (n > 0).then(|| s / n as f64)
    }
}

/// Rigid flow `F^cam_{k→i}` on frame `k`'s grid: unproject with `D_k` at
/// `P_k`, project at `P_i`, subtract the pixel coordinates.
pub fn camera_flow(depth_k: &DepthMap, pose_k: &Pose, pose_i: &Pose, k: &CameraIntrinsics) -> Result<FlowField> {
    let pts = unproject(depth_k, k, pose_k)?;
    let mut disp = Grid::filled(k.width, k.height, Vector2::zeros());
    let mut valid = Grid::filled(k.width, k.height, false);
    for (x, y, p) in pts.enumerate() {
        let Some(p) = p else { continue };
        let pr = project_point(p, k, pose_i);
        if pr.valid {
            disp.set(x, y, pr.pixel - Vector2::new(x as f64, y as f64));
            valid.set(x, y, true);
        }
    }
    FlowField::from_parts(disp, valid)
}

/// Inverts a flow by forward splatting: each valid source pixel `p` deposits
/// `-F(p)` at `p + F(p)` with bilinear weights. Destinations with total
/// weight below [`SPLAT_MIN_WEIGHT`] are invalid.
pub fn forward_splat_flow(flow: &FlowField) -> FlowField {
    let (w, h) = flow.dims();
    let mut acc = Grid::filled(w, h, Vector2::zeros());
    let mut weight = Grid::filled(w, h, 0.0);
    for (x, y, d) in flow.disp.enumerate() {
        if !*flow.valid.get(x, y) {
            continue;
        }
        let (tx, ty) = (x as f64 + d.x, y as f64 + d.y);
        if !(tx.is_finite() && ty.is_finite()) {
            continue;
        }
        let (x0, y0) = (tx.floor(), ty.floor());
        let (fx, fy) = (tx - x0, ty - y0);
        for (dx, dy, wt) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            let (qx, qy) = (x0 as i64 + dx, y0 as i64 + dy);
            if wt == 0.0 || qx < 0 || qy < 0 || qx >= w as i64 || qy >= h as i64 {
                continue;
            }
            let (qx, qy) = (qx as usize, qy as usize);
            *acc.get_mut(qx, qy) -= d * wt;
            *weight.get_mut(qx, qy) += wt;
        }
    }
    let valid = weight.map(|&s| s >= SPLAT_MIN_WEIGHT);
    let disp = Grid::from_fn(w, h, |x, y| {
        if *valid.get(x, y) {
            acc.get(x, y) / *weight.get(x, y)
        } else {
            Vector2::zeros()
        }
    });
    FlowField { disp, valid, weight }
}

/// `F^obj = F - F^cam`, valid where both inputs are.
pub fn object_flow(total: &FlowField, cam: &FlowField) -> Result<FlowField> {
    cam.disp.ensure_dims(total.dims())?;
    let valid = total.valid.and(&cam.valid)?;
    let (w, h) = total.dims();
    let disp = Grid::from_fn(w, h, |x, y| {
        if *valid.get(x, y) {
            total.disp.get(x, y) - cam.disp.get(x, y)
        } else {
            Vector2::zeros()
        }
    });
    FlowField::from_parts(disp, valid)
}

/// Forward-backward check on `a`'s grid: valid where
/// `|f_ab(p) + f_ba(p + f_ab(p))| <= abs_tol + rel_tol·|f_ab(p)|`.
pub fn bidirectional_mask(f_ab: &FlowField, f_ba: &FlowField, abs_tol: f64, rel_tol: f64) -> Result<Mask> {
    let (w, h) = f_ab.dims();
    f_ba.disp.ensure_dims((w, h))?;
    Ok(Grid::from_fn(w, h, |x, y| {
        let Some(d) = f_ab.at(x, y) else { return false };
        let Some(back) = f_ba.sample(x as f64 + d.x, y as f64 + d.y) else {
            return false;
        };
        (d + back).norm() <= abs_tol + rel_tol * d.norm()
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompensatedView {
    pub image: Image,
    pub mask: Mask,
}

/// Backward warp of `image` by a sampling field: output `p` reads
/// `image(p + f(p))`. The output mask is `mask` restricted to pixels whose
/// field is valid and whose sample lies inside the frame.
pub fn compensate_neighbor(image: &Image, sample_flow: &FlowField, mask: &Mask) -> Result<CompensatedView> {
    let dims = image.dims();
    sample_flow.disp.ensure_dims(dims)?;
    mask.ensure_dims(dims)?;
    let mut out = Image::filled(dims.0, dims.1, [0.0; 3]);
    let mut out_mask = Mask::filled(dims.0, dims.1, false);
    for y in 0..dims.1 {
        for x in 0..dims.0 {
            if !*mask.get(x, y) {
                continue;
            }
            let Some(d) = sample_flow.at(x, y) else { continue };
            let v = if d.x == 0.0 && d.y == 0.0 {
                Some(*image.get(x, y))
            } else {
                image.sample_bilinear(x as f64 + d.x, y as f64 + d.y)
            };
            if let Some(v) = v {
                out.set(x, y, v);
                out_mask.set(x, y, true);
            }
        }
    }
    Ok(CompensatedView {
        image: out,
        mask: out_mask,
    })
}

/// Everything the dynamics-aware supervision needs for one neighbour `i` of
/// source frame `k`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    /// `F^cam_{i→k}` obtained by splatting the depth-derived `F^cam_{k→i}`.
    pub camera: FlowField,
    /// `F^obj_{i→k}`, restricted to forward-backward consistent pixels.
    pub object: FlowField,
    /// Sampling field on the neighbour's grid that undoes object motion.
    pub pull: FlowField,
}

/// Decomposes the total flow `F_{i→k}` into camera and object parts using the
/// depth of frame `k`, and builds the pull field that moves objects in frame
/// `i` to where they are at time `k`.
pub fn decompose(
    depth_k: &DepthMap,
    pose_k: &Pose,
    pose_i: &Pose,
    k: &CameraIntrinsics,
    total_i_to_k: &FlowField,
    total_k_to_i: &FlowField,
) -> Result<Decomposition> {
    let cam_k_to_i = camera_flow(depth_k, pose_k, pose_i, k)?;
    let camera = forward_splat_flow(&cam_k_to_i);
    let consistent = bidirectional_mask(total_i_to_k, total_k_to_i, CONSISTENCY_ABS_TOL, CONSISTENCY_REL_TOL)?;
    let object = object_flow(total_i_to_k, &camera)?.restricted(&consistent)?;
    let pull = forward_splat_flow(&object);
    Ok(Decomposition { camera, object, pull })
}

/// Neighbour frame `i` with its dynamic objects moved to their time-`k`
/// positions, plus the pixels where that warp is trustworthy.
pub fn dynamic_compensation(image_i: &Image, decomposition: &Decomposition) -> Result<CompensatedView> {
    let (w, h) = image_i.dims();
    compensate_neighbor(image_i, &decomposition.pull, &Mask::filled(w, h, true))
}
