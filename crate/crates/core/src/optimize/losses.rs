//! Photometric, cross-frame and regularization losses with gradients.

use nalgebra::Vector3;

use super::ssim::ssim;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geometry::{CameraIntrinsics, DepthMap, Pose};
use crate::grid::{bilinear_taps, Grid, Image, Mask};
use crate::splat::{render, render_backward, GaussianScene, PrimitiveGrad, RenderUpstream};

/// Multiplier in the per-primitive scale threshold `70·w/D`.
pub const TAU_LARGE_FACTOR: f64 = 70.0;
/// Multiplier in the per-pixel depth threshold `0.2·D`.
pub const TAU_DEPTH_FACTOR: f64 = 0.2;

pub fn tau_large(image_width: usize, depth: f64) -> f64 {
    TAU_LARGE_FACTOR * image_width as f64 / depth
}

pub fn tau_depth(depth: f64) -> f64 {
    TAU_DEPTH_FACTOR * depth
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageLoss {
    pub value: f64,
    pub grad: Image,
}

/// `L1 + λ_ssim·(1 − SSIM)` of a prediction against a target supervised on
/// `mask`. L1 averages over masked pixels; outside the mask the target is
/// replaced by the prediction before SSIM. `None` when the mask is empty.
pub fn photometric_loss(pred: &Image, target: &Image, mask: &Mask, lambda_ssim: f64) -> Result<Option<ImageLoss>> {
    target.ensure_dims(pred.dims())?;
    mask.ensure_dims(pred.dims())?;
    let n = mask.count();
    if n == 0 {
        return Ok(None);
    }
    let (w, h) = pred.dims();
    let mut grad = Grid::filled(w, h, [0.0; 3]);
    let mut l1 = 0.0;
    let scale = 1.0 / (3 * n) as f64;
    let filled = Grid::from_fn(w, h, |x, y| if *mask.get(x, y) { *target.get(x, y) } else { *pred.get(x, y) });
    for (x, y, &m) in mask.enumerate() {
        if !m {
            continue;
        }
        let (p, t) = (pred.get(x, y), target.get(x, y));
        let g = grad.get_mut(x, y);
        for c in 0..3 {
            let d = p[c] - t[c];
            l1 += d.abs();
            g[c] = if d == 0.0 { 0.0 } else { d.signum() * scale };
        }
    }
    let s = ssim(pred, &filled)?;
    for (x, y, &m) in mask.enumerate() {
        let g = grad.get_mut(x, y);
        let ga = s.grad_a.get(x, y);
        let gb = s.grad_b.get(x, y);
        for c in 0..3 {
            // Unmasked target pixels are the prediction itself.
            let dssim = if m { ga[c] } else { ga[c] + gb[c] };
            g[c] -= lambda_ssim * dssim;
        }
    }
    Ok(Some(ImageLoss {
        value: l1 * scale + lambda_ssim * (1.0 - s.value),
        grad,
    }))
}

/// How positions enter the cross-frame regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairMode {
    /// Offsets divided by their anchor depth.
    #[default]
    NormalizedOffset,
    /// Raw world-space means.
    RawMean,
}

const PAIR_CHANNELS: usize = 14;

fn pair_params(scene: &GaussianScene, i: usize, mode: PairMode) -> [f64; PAIR_CHANNELS] {
    let p = &scene.primitives[i];
    let pos = match mode {
        PairMode::NormalizedOffset => p.offset / scene.anchor_depths[i],
        PairMode::RawMean => p.mu,
    };
    let mut a = [0.0; PAIR_CHANNELS];
    a[0..3].copy_from_slice(p.scale.as_slice());
    a[3..7].copy_from_slice(&p.rot);
    a[7] = p.alpha_logit;
    a[8..11].copy_from_slice(&p.color);
    a[11..14].copy_from_slice(pos.as_slice());
    a
}

fn add_pair_grad(g: &mut PrimitiveGrad, v: &[f64; PAIR_CHANNELS], depth: f64, mode: PairMode) {
    g.scale += Vector3::new(v[0], v[1], v[2]);
    for c in 0..4 {
        g.rot[c] += v[3 + c];
    }
    g.alpha_logit += v[7];
    for c in 0..3 {
        g.color[c] += v[8 + c];
    }
    let pos = Vector3::new(v[11], v[12], v[13]);
    match mode {
        PairMode::NormalizedOffset => g.offset += pos / depth,
        PairMode::RawMean => {
            g.mu += pos;
            g.offset += pos;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub value: f64,
    pub grad_i: Vec<PrimitiveGrad>,
    pub grad_j: Vec<PrimitiveGrad>,
    /// Pixels that entered the mean.
    pub pixels: usize,
}

/// Mean squared difference between the per-pixel parameters of `scene_i`
/// and those of `scene_j` sampled at `p + flow(p)`, over `mask` (on the grid
/// of `i`). `flow` is the correspondence field from `i` into `j`; rotations
/// are flipped into the hemisphere of `scene_i`'s before blending.
pub fn pair_regularizer(
    scene_i: &GaussianScene,
    scene_j: &GaussianScene,
    flow: &FlowField,
    mask: &Mask,
    mode: PairMode,
) -> Result<PairLoss> {
    let dims = (scene_i.width, scene_i.height);
    if (scene_j.width, scene_j.height) != dims {
        return Err(Error::ShapeMismatch { expected: dims, actual: (scene_j.width, scene_j.height) });
    }
    if scene_i.layers != scene_j.layers {
        return Err(Error::invalid("scenes have different layer counts"));
    }
    flow.disp.ensure_dims(dims)?;
    mask.ensure_dims(dims)?;
    let mut grad_i = vec![PrimitiveGrad::default(); scene_i.len()];
    let mut grad_j = vec![PrimitiveGrad::default(); scene_j.len()];
    let mut terms: Vec<(usize, [(usize, f64, f64); 4], [f64; PAIR_CHANNELS])> = Vec::new();
    let mut sum = 0.0;
    for layer in 0..scene_i.layers {
        let (slots_i, slots_j) = (scene_i.slot_grid(layer), scene_j.slot_grid(layer));
        for (x, y, &m) in mask.enumerate() {
            let (Some(a), true) = (*slots_i.get(x, y), m) else { continue };
            let Some(f) = flow.at(x, y) else { continue };
            let Some(taps) = bilinear_taps(dims.0, dims.1, x as f64 + f.x, y as f64 + f.y) else { continue };
            let ref_params = pair_params(scene_i, a, mode);
            let mut blended = [0.0; PAIR_CHANNELS];
            let mut used = [(0usize, 0.0f64, 1.0f64); 4];
            let mut complete = true;
            for (t, &(tx, ty, w)) in taps.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let Some(b) = *slots_j.get(tx, ty) else {
                    complete = false;
                    break;
                };
                let pb = pair_params(scene_j, b, mode);
                let dot: f64 = (3..7).map(|c| pb[c] * ref_params[c]).sum();
                let sign = if dot < 0.0 { -1.0 } else { 1.0 };
                for c in 0..PAIR_CHANNELS {
                    let s = if (3..7).contains(&c) { sign } else { 1.0 };
                    blended[c] += w * s * pb[c];
                }
                used[t] = (b, w, sign);
            }
            if !complete {
                continue;
            }
            let diff: [f64; PAIR_CHANNELS] = std::array::from_fn(|c| ref_params[c] - blended[c]);
            sum += diff.iter().map(|d| d * d).sum::<f64>();
            terms.push((a, used, diff));
        }
    }
    let pixels = terms.len();
    if pixels == 0 {
        return Ok(PairLoss { value: 0.0, grad_i, grad_j, pixels });
    }
    let norm = 1.0 / pixels as f64;
    for (a, used, diff) in &terms {
        let gi: [f64; PAIR_CHANNELS] = std::array::from_fn(|c| 2.0 * diff[c] * norm);
        add_pair_grad(&mut grad_i[*a], &gi, scene_i.anchor_depths[*a], mode);
        for &(b, w, sign) in used {
            if w == 0.0 {
                continue;
            }
            let gj: [f64; PAIR_CHANNELS] = std::array::from_fn(|c| {
                let s = if (3..7).contains(&c) { sign } else { 1.0 };
                -gi[c] * w * s
            });
            add_pair_grad(&mut grad_j[b], &gj, scene_j.anchor_depths[b], mode);
        }
    }
    Ok(PairLoss { value: sum * norm, grad_i, grad_j, pixels })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneLoss {
    pub value: f64,
    pub grad: Vec<PrimitiveGrad>,
}

/// Masked mean of the world-space scale entries that exceed
/// `τ_large = 70·w/D` of their primitive, over the exceeding entries only.
pub fn loss_scale(scene: &GaussianScene, image_width: usize) -> SceneLoss {
    let mut grad = vec![PrimitiveGrad::default(); scene.len()];
    let mut hits = Vec::new();
    for (i, p) in scene.primitives.iter().enumerate() {
        let tau = tau_large(image_width, scene.anchor_depths[i]);
        for c in 0..3 {
            let s = p.scale[c].exp();
            if s > tau {
                hits.push((i, c, s));
            }
        }
    }
    if hits.is_empty() {
        return SceneLoss { value: 0.0, grad };
    }
    let n = hits.len() as f64;
    let mut value = 0.0;
    for &(i, c, s) in &hits {
        value += s / n;
        grad[i].scale[c] += s / n;
    }
    SceneLoss { value, grad }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthPenalty {
    pub value: f64,
    /// Gradient with respect to the rendered depth.
    pub grad: Grid<f64>,
    pub pixels: usize,
}

/// Masked mean of `|D_render − D|` over pixels where it exceeds
/// `τ_depth = 0.2·D`, optionally restricted to `foreground`.
pub fn depth_penalty(rendered: &Grid<f64>, prior: &DepthMap, foreground: Option<&Mask>) -> Result<DepthPenalty> {
    prior.values.ensure_dims(rendered.dims())?;
    if let Some(f) = foreground {
        f.ensure_dims(rendered.dims())?;
    }
    let (w, h) = rendered.dims();
    let mut hits = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if foreground.is_some_and(|f| !*f.get(x, y)) {
                continue;
            }
            let Some(d) = prior.at(x, y) else { continue };
            let diff = *rendered.get(x, y) - d;
            if diff.abs() > tau_depth(d) {
                hits.push((x, y, diff));
            }
        }
    }
    let mut grad = Grid::filled(w, h, 0.0);
    if hits.is_empty() {
        return Ok(DepthPenalty { value: 0.0, grad, pixels: 0 });
    }
    let n = hits.len() as f64;
    let mut value = 0.0;
    for &(x, y, diff) in &hits {
        value += diff.abs() / n;
        grad.set(x, y, diff.signum() / n);
    }
    Ok(DepthPenalty { value, grad, pixels: hits.len() })
}

/// [`depth_penalty`] of the scene's own depth render at its source pose.
pub fn loss_offset(
    scene: &GaussianScene,
    k: &CameraIntrinsics,
    pose: &Pose,
    prior: &DepthMap,
    foreground: Option<&Mask>,
) -> Result<SceneLoss> {
    let out = render(scene, k, pose);
    let pen = depth_penalty(&out.depth, prior, foreground)?;
    if pen.pixels == 0 {
        return Ok(SceneLoss { value: 0.0, grad: vec![PrimitiveGrad::default(); scene.len()] });
    }
    let mut up = RenderUpstream::zeros(k.width, k.height);
    up.depth = Some(pen.grad);
    let grad = render_backward(scene, k, pose, &up)?;
    Ok(SceneLoss { value: pen.value, grad })
}
