use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::{sigmoid, GaussianPrimitive, GaussianScene, PrimitiveGrad};
use crate::error::Result;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::grid::{Grid, Image};

pub const TILE_SIZE: usize = 8;
/// Primitives with camera-space z at or below this are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Added to both diagonal entries of every screen-space covariance (px²).
pub const COV_DILATION: f64 = 0.3;
/// A primitive touches a pixel only if `½ dᵀ Σ⁻¹ d` is below this (4σ).
pub const MAHALANOBIS_CUTOFF: f64 = 8.0;
pub const ALPHA_MAX: f64 = 1.0 - 1e-9;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

/// Gaussian falloff shifted and rescaled to reach exactly zero at the
/// cutoff, so contributions vanish continuously at the box edge. Equal to
/// `exp(−power)` within `exp(−MAHALANOBIS_CUTOFF)`.
#[inline]
pub fn falloff(power: f64) -> f64 {
    if power < MAHALANOBIS_CUTOFF {
        ((-power).exp() - FLOOR) / (1.0 - FLOOR)
    } else {
        0.0
    }
}

const FLOOR: f64 = 3.354_626_279_025_119e-4; // exp(−8)

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// Composited over a black background.
    pub color: Image,
    /// Expected camera-space z under the compositing weights; 0 where empty.
    pub depth: Grid<f64>,
    pub alpha: Grid<f64>,
}

/// Loss gradients with respect to the rendered images.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderUpstream {
    pub color: Image,
    pub depth: Option<Grid<f64>>,
    pub alpha: Option<Grid<f64>>,
}

impl RenderUpstream {
    pub fn color_only(color: Image) -> Self {
        RenderUpstream { color, depth: None, alpha: None }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        RenderUpstream::color_only(Grid::filled(width, height, [0.0; 3]))
    }
}

/// A primitive after projection into one view.
#[derive(Debug, Clone)]
struct Splat {
    id: usize,
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    z: f64,
    opacity: f64,
    color: [f64; 3],
    bbox: [usize; 4],
}

struct ViewGeom {
    w: Matrix3<f64>,
    center: Vector3<f64>,
}

impl ViewGeom {
    fn new(view: &Pose) -> Self {
        ViewGeom {
            w: view.rotation_matrix().transpose(),
            center: view.translation,
        }
    }
}

/// Rotation matrix of a (not necessarily unit) quaternion, with the norm.
fn quat_matrix(q: &[f64; 4]) -> Option<(Matrix3<f64>, f64)> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n > 1e-12) || !n.is_finite() {
        return None;
    }
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    #[rustfmt::skip]
    let r = Matrix3::new(
        1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y),
    );
    Some((r, n))
}

fn world_covariance(p: &GaussianPrimitive) -> Option<(Matrix3<f64>, Matrix3<f64>, Vector3<f64>)> {
    let (r, _) = quat_matrix(&p.rot)?;
    let var = p.scale.map(|s| (2.0 * s).exp());
    let sigma = r * Matrix3::from_diagonal(&var) * r.transpose();
    Some((sigma, r, var))
}

fn projection_jacobian(t: &Vector3<f64>, k: &CameraIntrinsics) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    #[rustfmt::skip]
    let j = Matrix2x3::new(
        k.fx * iz, 0.0, -k.fx * t.x * iz * iz,
        0.0, k.fy * iz, -k.fy * t.y * iz * iz,
    );
    j
}

fn project_splat(id: usize, p: &GaussianPrimitive, k: &CameraIntrinsics, geom: &ViewGeom) -> Option<Splat> {
    let t = geom.w * (p.mu - geom.center);
    if !(t.z > NEAR_PLANE) || !t.x.is_finite() || !t.y.is_finite() {
        return None;
    }
    let (sigma3, _, _) = world_covariance(p)?;
    let m = projection_jacobian(&t, k) * geom.w;
    let cov = m * sigma3 * m.transpose() + Matrix2::identity() * COV_DILATION;
    let conic = cov.try_inverse()?;
    let mean = Vector2::new(k.fx * t.x / t.z + k.cx, k.fy * t.y / t.z + k.cy);
    if !mean.iter().chain(conic.iter()).all(|v| v.is_finite()) {
        return None;
    }
    // Bounding box of the cutoff ellipse, from the largest eigenvalue.
    let half_tr = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    let lambda_max = half_tr + (half_tr * half_tr - det).max(0.0).sqrt();
    let radius = (2.0 * MAHALANOBIS_CUTOFF * lambda_max).sqrt() * (1.0 + 1e-9) + 1e-9;
    let (w, h) = (k.width as f64, k.height as f64);
    let x0 = (mean.x - radius).ceil().max(0.0);
    let x1 = (mean.x + radius).floor().min(w - 1.0);
    let y0 = (mean.y - radius).ceil().max(0.0);
    let y1 = (mean.y + radius).floor().min(h - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some(Splat {
        id,
        mean,
        conic,
        z: t.z,
        opacity: sigmoid(p.alpha_logit),
        color: p.color,
        bbox: [x0 as usize, x1 as usize, y0 as usize, y1 as usize],
    })
}

struct Binned {
    splats: Vec<Splat>,
    /// Per tile, indices into `splats` in front-to-back order.
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    tiles_y: usize,
}

fn bin(primitives: &[GaussianPrimitive], k: &CameraIntrinsics, view: &Pose) -> Binned {
    let geom = ViewGeom::new(view);
    let mut splats: Vec<Splat> = primitives
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| project_splat(i, p, k, &geom))
        .collect();
    splats.sort_by(|a, b| a.z.total_cmp(&b.z).then(a.id.cmp(&b.id)));
    let tiles_x = k.width.div_ceil(TILE_SIZE);
    let tiles_y = k.height.div_ceil(TILE_SIZE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (s, sp) in splats.iter().enumerate() {
        let [x0, x1, y0, y1] = sp.bbox;
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                tiles[ty * tiles_x + tx].push(s as u32);
            }
        }
    }
    Binned { splats, tiles, tiles_x, tiles_y }
}

impl Binned {
    /// Pixel column range and row range of a tile.
    fn tile_bounds(&self, tile: usize, k: &CameraIntrinsics) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let (x0, y0) = (tx * TILE_SIZE, ty * TILE_SIZE);
        (x0..(x0 + TILE_SIZE).min(k.width), y0..(y0 + TILE_SIZE).min(k.height))
    }

    fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }
}

/// Compact copy of a splat for the per-pixel loops.
#[derive(Debug, Clone, Copy)]
struct Entry {
    x0: u32,
    x1: u32,
    y0: u32,
    y1: u32,
    mx: f64,
    my: f64,
    qa: f64,
    qb: f64,
    qc: f64,
    opacity: f64,
    slot: u32,
    /// Position of the splat in the tile list.
    local: u32,
}

/// Entries of one tile whose boxes reach row `y`, front to back.
fn row_entries(binned: &Binned, list: &[u32], y: usize, out: &mut Vec<Entry>) {
    out.clear();
    let y = y as u32;
    for (local, &slot) in list.iter().enumerate() {
        let sp = &binned.splats[slot as usize];
        let [x0, x1, y0, y1] = sp.bbox;
        if y < y0 as u32 || y > y1 as u32 {
            continue;
        }
        out.push(Entry {
            x0: x0 as u32,
            x1: x1 as u32,
            y0: y0 as u32,
            y1: y1 as u32,
            mx: sp.mean.x,
            my: sp.mean.y,
            qa: sp.conic[(0, 0)],
            qb: sp.conic[(0, 1)] + sp.conic[(1, 0)],
            qc: sp.conic[(1, 1)],
            opacity: sp.opacity,
            slot,
            local: local as u32,
        });
    }
}

/// One primitive's contribution at one pixel.
#[derive(Debug, Clone, Copy)]
struct Hit {
    slot: u32,
    local: u32,
    alpha: f64,
    clipped: bool,
    /// `−∂alpha/∂power`.
    slope: f64,
    transmittance: f64,
    d: Vector2<f64>,
}

/// Front-to-back compositing of one pixel; fills `hits` with the
/// contributors and returns the final transmittance.
fn composite_pixel(entries: &[Entry], x: usize, y: usize, hits: &mut Vec<Hit>) -> f64 {
    hits.clear();
    let (px, py) = (x as f64, y as f64);
    let xu = x as u32;
    let mut t = 1.0;
    for e in entries {
        if xu < e.x0 || xu > e.x1 {
            continue;
        }
        debug_assert!(y as u32 >= e.y0 && y as u32 <= e.y1);
        let (dx, dy) = (px - e.mx, py - e.my);
        let power = 0.5 * (e.qa * dx * dx + e.qb * dx * dy + e.qc * dy * dy);
        if !(power < MAHALANOBIS_CUTOFF) {
            continue;
        }
        let ep = (-power).exp();
        let raw = e.opacity * (ep - FLOOR) / (1.0 - FLOOR);
        let (alpha, clipped) = if raw > ALPHA_MAX { (ALPHA_MAX, true) } else { (raw, false) };
        hits.push(Hit {
            slot: e.slot,
            local: e.local,
            alpha,
            clipped,
            slope: e.opacity * ep / (1.0 - FLOOR),
            transmittance: t,
            d: Vector2::new(dx, dy),
        });
        t *= 1.0 - alpha;
        if t < TRANSMITTANCE_MIN {
            break;
        }
    }
    t
}

pub fn render(scene: &GaussianScene, k: &CameraIntrinsics, view: &Pose) -> RenderOutput {
    render_primitives(&scene.primitives, k, view)
}

pub fn render_primitives(primitives: &[GaussianPrimitive], k: &CameraIntrinsics, view: &Pose) -> RenderOutput {
    let binned = bin(primitives, k, view);
    let tiles: Vec<Vec<(usize, usize, [f64; 3], f64, f64)>> = (0..binned.tile_count())
        .into_par_iter()
        .map(|tile| {
            let list = &binned.tiles[tile];
            let mut hits = Vec::new();
            let mut entries = Vec::new();
            let (xs, ys) = binned.tile_bounds(tile, k);
            let mut px = Vec::with_capacity(TILE_SIZE * TILE_SIZE);
            for y in ys {
                row_entries(&binned, list, y, &mut entries);
                for x in xs.clone() {
                    let t_final = composite_pixel(&entries, x, y, &mut hits);
                    let mut c = [0.0; 3];
                    let mut zsum = 0.0;
                    for h in &hits {
                        let sp = &binned.splats[h.slot as usize];
                        let w = h.alpha * h.transmittance;
                        for ch in 0..3 {
                            c[ch] += w * sp.color[ch];
                        }
                        zsum += w * sp.z;
                    }
                    let a = 1.0 - t_final;
                    let depth = if a > 0.0 { zsum / a } else { 0.0 };
                    px.push((x, y, c, depth, a));
                }
            }
            px
        })
        .collect();
    let (w, h) = k.dims();
    let mut out = RenderOutput {
        color: Grid::filled(w, h, [0.0; 3]),
        depth: Grid::filled(w, h, 0.0),
        alpha: Grid::filled(w, h, 0.0),
    };
    for (x, y, c, d, a) in tiles.into_iter().flatten() {
        out.color.set(x, y, c);
        out.depth.set(x, y, d);
        out.alpha.set(x, y, a);
    }
    out
}

/// Screen-space gradient of one splat.
#[derive(Debug, Clone, Copy, Default)]
struct ScreenGrad {
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
    z: f64,
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        self.mean += o.mean;
        self.conic += o.conic;
        self.opacity += o.opacity;
        for c in 0..3 {
            self.color[c] += o.color[c];
        }
        self.z += o.z;
    }
}

/// Gradients of a loss with respect to every primitive, given the loss
/// gradients on the rendered images of the same view.
pub fn render_backward(
    scene: &GaussianScene,
    k: &CameraIntrinsics,
    view: &Pose,
    upstream: &RenderUpstream,
) -> Result<Vec<PrimitiveGrad>> {
    render_primitives_backward(&scene.primitives, k, view, upstream)
}

pub fn render_primitives_backward(
    primitives: &[GaussianPrimitive],
    k: &CameraIntrinsics,
    view: &Pose,
    upstream: &RenderUpstream,
) -> Result<Vec<PrimitiveGrad>> {
    upstream.color.ensure_dims(k.dims())?;
    if let Some(g) = &upstream.depth {
        g.ensure_dims(k.dims())?;
    }
    if let Some(g) = &upstream.alpha {
        g.ensure_dims(k.dims())?;
    }
    let binned = bin(primitives, k, view);
    let partials: Vec<Vec<ScreenGrad>> = (0..binned.tile_count())
        .into_par_iter()
        .map(|tile| backward_tile(&binned, tile, k, upstream))
        .collect();
    // Fixed-order reduction keeps the result independent of the schedule.
    let mut screen = vec![ScreenGrad::default(); binned.splats.len()];
    for (tile, partial) in partials.iter().enumerate() {
        for (local, g) in partial.iter().enumerate() {
            screen[binned.tiles[tile][local] as usize].add(g);
        }
    }
    let geom = ViewGeom::new(view);
    let mut grads = vec![PrimitiveGrad::default(); primitives.len()];
    for (sp, g) in binned.splats.iter().zip(&screen) {
        grads[sp.id] = chain_to_primitive(&primitives[sp.id], g, k, &geom);
    }
    Ok(grads)
}

fn backward_tile(binned: &Binned, tile: usize, k: &CameraIntrinsics, up: &RenderUpstream) -> Vec<ScreenGrad> {
    let list = &binned.tiles[tile];
    let mut acc = vec![ScreenGrad::default(); list.len()];
    if list.is_empty() {
        return acc;
    }
    let mut hits = Vec::new();
    let mut entries = Vec::new();
    let (xs, ys) = binned.tile_bounds(tile, k);
    for (x, y) in ys.flat_map(|y| xs.clone().map(move |x| (x, y))) {
        if x == xs.start {
            row_entries(binned, list, y, &mut entries);
        }
        let t_final = composite_pixel(&entries, x, y, &mut hits);
        if hits.is_empty() {
            continue;
        }
        let gc = *up.color.get(x, y);
        let a_total = 1.0 - t_final;
        // Depth is N / A with N = Σ w z; fold its gradient into N and A.
        let mut g_n = 0.0;
        let mut g_a = up.alpha.as_ref().map_or(0.0, |g| *g.get(x, y));
        if let Some(gd) = &up.depth {
            let gd = *gd.get(x, y);
            if a_total > 0.0 && gd != 0.0 {
                let zsum: f64 = hits
                    .iter()
                    .map(|h| h.alpha * h.transmittance * binned.splats[h.slot as usize].z)
                    .sum();
                g_n = gd / a_total;
                g_a -= gd * zsum / (a_total * a_total);
            }
        }
        // Per-hit value g·f with f = (color, z, 1).
        let value = |h: &Hit| {
            let sp = &binned.splats[h.slot as usize];
            gc[0] * sp.color[0] + gc[1] * sp.color[1] + gc[2] * sp.color[2] + g_n * sp.z + g_a
        };
        // Walk back to front with R_j = Σ_{i>j} a_i Π_{j<m<i}(1−a_m) v_i.
        let mut rest = 0.0;
        for h in hits.iter().rev() {
            let sp = &binned.splats[h.slot as usize];
            let v = value(h);
            let w = h.alpha * h.transmittance;
            let g = &mut acc[h.local as usize];
            for c in 0..3 {
                g.color[c] += w * gc[c];
            }
            g.z += w * g_n;
            let d_alpha = h.transmittance * (v - rest);
            if !h.clipped {
                // alpha = opacity · falloff(power)
                g.opacity += d_alpha * h.alpha / sp.opacity;
                let d_power = -d_alpha * h.slope;
                let qd = sp.conic * h.d;
                g.mean -= qd * d_power;
                g.conic += h.d * h.d.transpose() * (0.5 * d_power);
            }
            rest = h.alpha * v + (1.0 - h.alpha) * rest;
        }
    }
    acc
}

fn chain_to_primitive(p: &GaussianPrimitive, g: &ScreenGrad, k: &CameraIntrinsics, geom: &ViewGeom) -> PrimitiveGrad {
    let t = geom.w * (p.mu - geom.center);
    let (sigma3, r, var) = world_covariance(p).expect("projected primitive has a valid rotation");
    let j = projection_jacobian(&t, k);
    let m = j * geom.w;
    let cov = m * sigma3 * m.transpose() + Matrix2::identity() * COV_DILATION;
    let conic = cov.try_inverse().expect("projected primitive has an invertible covariance");

    // conic = cov⁻¹
    let g_cov = -conic.transpose() * g.conic * conic.transpose();
    // cov = M Σ Mᵀ
    let g_sigma3 = m.transpose() * g_cov * m;
    let g_m = (g_cov + g_cov.transpose()) * m * sigma3;
    let g_j = g_m * geom.w.transpose();

    let iz = 1.0 / t.z;
    let mut g_t = Vector3::new(0.0, 0.0, g.z);
    // mean = (fx x/z + cx, fy y/z + cy)
    g_t.x += g.mean.x * k.fx * iz;
    g_t.z -= g.mean.x * k.fx * t.x * iz * iz;
    g_t.y += g.mean.y * k.fy * iz;
    g_t.z -= g.mean.y * k.fy * t.y * iz * iz;
    // J entries
    g_t.z -= g_j[(0, 0)] * k.fx * iz * iz;
    g_t.x -= g_j[(0, 2)] * k.fx * iz * iz;
    g_t.z += g_j[(0, 2)] * 2.0 * k.fx * t.x * iz * iz * iz;
    g_t.z -= g_j[(1, 1)] * k.fy * iz * iz;
    g_t.y -= g_j[(1, 2)] * k.fy * iz * iz;
    g_t.z += g_j[(1, 2)] * 2.0 * k.fy * t.y * iz * iz * iz;
    let g_mu = geom.w.transpose() * g_t;

    // Σ = R diag(var) Rᵀ
    let g_sym = g_sigma3 + g_sigma3.transpose();
    let rt_g_r = r.transpose() * g_sigma3 * r;
    let g_scale = Vector3::from_fn(|i, _| rt_g_r[(i, i)] * 2.0 * var[i]);
    let g_r = g_sym * r * Matrix3::from_diagonal(&var);
    let g_rot = quat_backward(&p.rot, &g_r);

    let s = sigmoid(p.alpha_logit);
    PrimitiveGrad {
        mu: g_mu,
        scale: g_scale,
        rot: g_rot,
        alpha_logit: g.opacity * s * (1.0 - s),
        color: g.color,
        offset: g_mu,
    }
}

/// Pulls a gradient on the rotation matrix back to the raw quaternion.
fn quat_backward(q: &[f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let gw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)] + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)] - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let gn = [gw, gx, gy, gz];
    let qn = [w, x, y, z];
    let dot: f64 = (0..4).map(|i| gn[i] * qn[i]).sum();
    std::array::from_fn(|i| (gn[i] - dot * qn[i]) / n)
}
