//! Test-time optimization of per-frame Gaussian scenes.

mod extrapolate;
mod losses;
mod pipeline;
mod schedule;
mod ssim;

pub use extrapolate::{extrapolate_frames, DEFAULT_PAD};
pub use losses::{
    depth_penalty, loss_offset, loss_scale, pair_regularizer, photometric_loss, tau_depth, tau_large, DepthPenalty,
    ImageLoss, PairLoss, PairMode, SceneLoss, TAU_DEPTH_FACTOR, TAU_LARGE_FACTOR,
};
pub use pipeline::{stabilize, Stabilized, COVERAGE_ALPHA};
pub use schedule::{cumulative_reach, cumulative_span, dilation_for_epoch, pair_offsets, pair_set};
pub use ssim::{ssim, Ssim, SSIM_C1, SSIM_C2, SSIM_RADIUS, SSIM_SIGMA};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::VideoBundle;
use crate::error::{Error, Result};
use crate::flow::{bidirectional_mask, decompose, dynamic_compensation, FlowField, CONSISTENCY_ABS_TOL, CONSISTENCY_REL_TOL};
use crate::geometry::{CameraIntrinsics, DepthMap, Pose};
use crate::grid::{Grid, Image, Mask};
use crate::splat::{
    accumulate_grads, build_scene, render, render_backward, GaussianScene, PrimitiveGrad, RenderUpstream, SceneInit,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    /// Offset step per meter of anchor depth.
    pub position: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1e-4,
            scale: 1e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            color: 5e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OptimizerKind {
    /// Per-parameter normalized steps; the step size is the learning rate.
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub epochs: usize,
    pub views_per_step: usize,
    /// Supervising neighbours are drawn from `[k − window, k + window]`.
    pub window: usize,
    pub reg_window: usize,
    pub dilation_schedule: Vec<usize>,
    pub steps_per_epoch: usize,
    pub lambda_ssim: f64,
    pub lambda_consistent: f64,
    pub lambda_scale: f64,
    pub lambda_offset: f64,
    pub learning_rates: LearningRates,
    pub optimizer: OptimizerKind,
    pub pair_mode: PairMode,
    /// Move dynamic content of neighbours to its source-time position.
    pub compensate_dynamics: bool,
    /// Restrict the offset loss to static pixels using the dynamic masks.
    pub offset_static_only: bool,
    pub scene_init: SceneInit,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            epochs: 3,
            views_per_step: 4,
            window: 10,
            reg_window: 5,
            dilation_schedule: vec![0, 2, 4],
            steps_per_epoch: 30,
            lambda_ssim: 0.2,
            lambda_consistent: 0.1,
            lambda_scale: 0.01,
            lambda_offset: 0.1,
            learning_rates: LearningRates::default(),
            optimizer: OptimizerKind::Adam,
            pair_mode: PairMode::NormalizedOffset,
            compensate_dynamics: true,
            offset_static_only: false,
            scene_init: SceneInit::default(),
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs != self.dilation_schedule.len() {
            return Err(Error::invalid(format!(
                "{} epochs but {} dilation entries",
                self.epochs,
                self.dilation_schedule.len()
            )));
        }
        if self.reg_window % 2 == 0 {
            return Err(Error::invalid("reg_window must be odd"));
        }
        if self.window == 0 || self.views_per_step == 0 {
            return Err(Error::invalid("window and views_per_step must be at least 1"));
        }
        let lambdas = [self.lambda_ssim, self.lambda_consistent, self.lambda_scale, self.lambda_offset];
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        let lr = &self.learning_rates;
        if [lr.position, lr.scale, lr.rotation, lr.opacity, lr.color].iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::invalid("learning rates must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rgb: f64,
    pub consistent: f64,
    pub scale: f64,
    pub offset: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(rgb: f64, consistent: f64, scale: f64, offset: f64, cfg: &OptimConfig) -> Self {
        LossBreakdown {
            rgb,
            consistent,
            scale,
            offset,
            total: rgb + cfg.lambda_consistent * consistent + cfg.lambda_scale * scale + cfg.lambda_offset * offset,
        }
    }
}

/// One supervising view of a source frame's scene.
#[derive(Debug, Clone)]
pub struct SupervisionView {
    pub frame: usize,
    pub pose: Pose,
    pub target: Image,
    pub mask: Mask,
}

/// Supervision for frame `k`: the frame itself first, then every neighbour
/// within the window that has flows in both directions. Neighbour targets
/// have dynamic content moved to its time-`k` position when
/// `compensate` is set; masks keep pixels that the compensating warp and the
/// camera-flow splat both cover.
pub fn supervision_views(bundle: &VideoBundle, k: usize, window: usize, compensate: bool) -> Result<Vec<SupervisionView>> {
    let (w, h) = bundle.intrinsics.dims();
    let mut views = vec![SupervisionView {
        frame: k,
        pose: bundle.poses[k],
        target: bundle.frames[k].clone(),
        mask: Mask::filled(w, h, true),
    }];
    let lo = k.saturating_sub(window);
    let hi = (k + window).min(bundle.len() - 1);
    for i in lo..=hi {
        if i == k {
            continue;
        }
        let (Some(f_ik), Some(f_ki)) = (bundle.flow(i, k), bundle.flow(k, i)) else { continue };
        let dec = decompose(&bundle.depths[k], &bundle.poses[k], &bundle.poses[i], &bundle.intrinsics, f_ik, f_ki)?;
        let comp = dynamic_compensation(&bundle.frames[i], &dec)?;
        let mask = comp.mask.and(&dec.camera.valid)?;
        let target = if compensate { comp.image } else { bundle.frames[i].clone() };
        views.push(SupervisionView {
            frame: i,
            pose: bundle.poses[i],
            target,
            mask,
        });
    }
    Ok(views)
}

/// Cross-frame regularization partner of a source frame.
#[derive(Debug, Clone)]
pub struct PairTerm {
    pub frame: usize,
    /// Correspondences from the source frame into `frame`.
    pub flow: FlowField,
    pub mask: Mask,
}

pub fn pair_terms(bundle: &VideoBundle, k: usize, reg_window: usize, dilation: usize) -> Result<Vec<PairTerm>> {
    let mut out = Vec::new();
    for j in pair_set(k, bundle.len(), reg_window, dilation)? {
        if j == k {
            continue;
        }
        let (Some(f_kj), Some(f_jk)) = (bundle.flow(k, j), bundle.flow(j, k)) else { continue };
        let mask = bidirectional_mask(f_kj, f_jk, CONSISTENCY_ABS_TOL, CONSISTENCY_REL_TOL)?;
        out.push(PairTerm { frame: j, flow: f_kj.clone(), mask });
    }
    Ok(out)
}

/// Inputs of the source-frame terms that do not change during optimization.
#[derive(Debug, Clone, Copy)]
pub struct SourceTerms<'a> {
    pub intrinsics: &'a CameraIntrinsics,
    pub pose: &'a Pose,
    pub prior_depth: &'a DepthMap,
    pub foreground: Option<&'a Mask>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    pub grad: Vec<PrimitiveGrad>,
    /// Views whose masks were non-empty.
    pub views_used: usize,
}

/// Total loss of `scene` and its gradient. The photometric term averages over
/// `views`; the offset term uses the depth render of the view at the source
/// pose when one is present; the consistency term averages over `pairs`.
pub fn evaluate(
    scene: &GaussianScene,
    source: &SourceTerms,
    views: &[&SupervisionView],
    pairs: &[(&PairTerm, &GaussianScene)],
    cfg: &OptimConfig,
) -> Result<Evaluation> {
    let k = source.intrinsics;
    let mut grad = vec![PrimitiveGrad::default(); scene.len()];
    let mut view_losses = Vec::with_capacity(views.len());
    let mut offset = None;
    for view in views {
        let out = render(scene, k, &view.pose);
        let photo = photometric_loss(&out.color, &view.target, &view.mask, cfg.lambda_ssim)?;
        let depth = if view.frame == scene.source_frame && offset.is_none() {
            let pen = losses::depth_penalty(&out.depth, source.prior_depth, source.foreground)?;
            offset = Some(pen.value);
            Some(pen.grad)
        } else {
            None
        };
        view_losses.push((photo, depth, &view.pose));
    }
    let used = view_losses.iter().filter(|(p, _, _)| p.is_some()).count();
    if used == 0 {
        return Err(Error::invalid(format!("frame {}: no view has a supervised pixel", scene.source_frame)));
    }
    let mut rgb = 0.0;
    for (photo, depth, pose) in view_losses {
        let color = match photo {
            Some(p) => {
                rgb += p.value / used as f64;
                p.grad.map(|g| g.map(|v| v / used as f64))
            }
            None => Grid::filled(k.width, k.height, [0.0; 3]),
        };
        let up = RenderUpstream {
            color,
            depth: depth.map(|d| d.map(|v| v * cfg.lambda_offset)),
            alpha: None,
        };
        accumulate_grads(&mut grad, &render_backward(scene, k, pose, &up)?, 1.0);
    }
    let offset = match offset {
        Some(v) => v,
        None => {
            let l = loss_offset(scene, k, source.pose, source.prior_depth, source.foreground)?;
            accumulate_grads(&mut grad, &l.grad, cfg.lambda_offset);
            l.value
        }
    };
    let mut consistent = 0.0;
    if !pairs.is_empty() {
        let w = 1.0 / pairs.len() as f64;
        for (term, other) in pairs {
            let p = pair_regularizer(scene, other, &term.flow, &term.mask, cfg.pair_mode)?;
            consistent += w * p.value;
            accumulate_grads(&mut grad, &p.grad_i, w * cfg.lambda_consistent);
        }
    }
    let scale = loss_scale(scene, k.width);
    accumulate_grads(&mut grad, &scale.grad, cfg.lambda_scale);
    Ok(Evaluation {
        breakdown: LossBreakdown::new(rgb, consistent, scale.value, offset, cfg),
        grad,
        views_used: used,
    })
}

/// Mean photometric loss of `scene` over `views` with its gradient.
pub fn loss_rgb(
    scene: &GaussianScene,
    intrinsics: &CameraIntrinsics,
    views: &[&SupervisionView],
    lambda_ssim: f64,
) -> Result<(f64, Vec<PrimitiveGrad>)> {
    let mut terms = Vec::new();
    for view in views {
        let out = render(scene, intrinsics, &view.pose);
        if let Some(l) = photometric_loss(&out.color, &view.target, &view.mask, lambda_ssim)? {
            terms.push((l, &view.pose));
        }
    }
    if terms.is_empty() {
        return Err(Error::invalid("no view has a supervised pixel"));
    }
    let n = terms.len() as f64;
    let mut grad = vec![PrimitiveGrad::default(); scene.len()];
    let mut value = 0.0;
    for (l, pose) in terms {
        value += l.value / n;
        let up = RenderUpstream::color_only(l.grad.map(|g| g.map(|v| v / n)));
        accumulate_grads(&mut grad, &render_backward(scene, intrinsics, pose, &up)?, 1.0);
    }
    Ok((value, grad))
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;
const STATE_LEN: usize = 14;

/// Optimizer state of one scene; survives across epochs.
#[derive(Debug, Clone)]
pub struct SceneOptimizer {
    anchors: Vec<nalgebra::Vector3<f64>>,
    m: Vec<[f64; STATE_LEN]>,
    v: Vec<[f64; STATE_LEN]>,
    step: u32,
}

impl SceneOptimizer {
    pub fn new(scene: &GaussianScene) -> Self {
        SceneOptimizer {
            anchors: scene.primitives.iter().map(|p| p.anchor()).collect(),
            m: vec![[0.0; STATE_LEN]; scene.len()],
            v: vec![[0.0; STATE_LEN]; scene.len()],
            step: 0,
        }
    }

    pub fn apply(&mut self, scene: &mut GaussianScene, grad: &[PrimitiveGrad], cfg: &OptimConfig) {
        self.step += 1;
        let lr = &cfg.learning_rates;
        let (bc1, bc2) = (1.0 - ADAM_BETA1.powi(self.step as i32), 1.0 - ADAM_BETA2.powi(self.step as i32));
        for (i, p) in scene.primitives.iter_mut().enumerate() {
            let g = &grad[i];
            let flat: [f64; STATE_LEN] = [
                g.offset.x,
                g.offset.y,
                g.offset.z,
                g.scale.x,
                g.scale.y,
                g.scale.z,
                g.rot[0],
                g.rot[1],
                g.rot[2],
                g.rot[3],
                g.alpha_logit,
                g.color[0],
                g.color[1],
                g.color[2],
            ];
            let pos_lr = lr.position * scene.anchor_depths[i];
            let rates = |c: usize| match c {
                0..=2 => pos_lr,
                3..=5 => lr.scale,
                6..=9 => lr.rotation,
                10 => lr.opacity,
                _ => lr.color,
            };
            let mut delta = [0.0; STATE_LEN];
            for c in 0..STATE_LEN {
                delta[c] = match cfg.optimizer {
                    OptimizerKind::Sgd => -rates(c) * flat[c],
                    OptimizerKind::Adam => {
                        let m = &mut self.m[i][c];
                        let v = &mut self.v[i][c];
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * flat[c];
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * flat[c] * flat[c];
                        let (mh, vh) = (*m / bc1, *v / bc2);
                        -rates(c) * mh / (vh.sqrt() + ADAM_EPS)
                    }
                };
            }
            p.offset += nalgebra::Vector3::new(delta[0], delta[1], delta[2]);
            p.mu = self.anchors[i] + p.offset;
            p.scale += nalgebra::Vector3::new(delta[3], delta[4], delta[5]);
            for c in 0..4 {
                p.rot[c] += delta[6 + c];
            }
            let n = p.rot.iter().map(|q| q * q).sum::<f64>().sqrt();
            if n > 0.0 {
                p.rot = p.rot.map(|q| q / n);
            }
            p.alpha_logit += delta[10];
            for c in 0..3 {
                p.color[c] += delta[11 + c];
            }
        }
    }
}

/// Scenes after optimization plus the per-step loss history of each frame.
#[derive(Debug, Clone)]
pub struct OptimizedVideo {
    pub scenes: Vec<GaussianScene>,
    pub history: Vec<Vec<LossBreakdown>>,
}

pub fn build_scenes(bundle: &VideoBundle, init: &SceneInit) -> Result<Vec<GaussianScene>> {
    (0..bundle.len())
        .into_par_iter()
        .map(|k| build_scene(&bundle.frames[k], &bundle.depths[k], &bundle.intrinsics, &bundle.poses[k], k, init))
        .collect()
}

fn foreground(bundle: &VideoBundle, k: usize, cfg: &OptimConfig) -> Option<Mask> {
    if !cfg.offset_static_only {
        return None;
    }
    bundle.dynamic_masks.as_ref().map(|m| m[k].map(|d| !d))
}

/// Runs one epoch of steps on frame `k`'s scene against frozen neighbours.
#[allow(clippy::too_many_arguments)]
fn run_epoch(
    scene: &mut GaussianScene,
    opt: &mut SceneOptimizer,
    bundle: &VideoBundle,
    snapshot: &[GaussianScene],
    epoch: usize,
    cfg: &OptimConfig,
    history: &mut Vec<LossBreakdown>,
) -> Result<()> {
    let k = scene.source_frame;
    let views = supervision_views(bundle, k, cfg.window, cfg.compensate_dynamics)?;
    let d = dilation_for_epoch(epoch, &cfg.dilation_schedule)?;
    let terms = pair_terms(bundle, k, cfg.reg_window, d)?;
    let pairs: Vec<(&PairTerm, &GaussianScene)> = terms.iter().map(|t| (t, &snapshot[t.frame])).collect();
    let fg = foreground(bundle, k, cfg);
    let source = SourceTerms {
        intrinsics: &bundle.intrinsics,
        pose: &bundle.poses[k],
        prior_depth: &bundle.depths[k],
        foreground: fg.as_ref(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(((k as u64) << 16) | epoch as u64);
    let neighbours = views.len() - 1;
    for step in 0..cfg.steps_per_epoch {
        let mut chosen: Vec<&SupervisionView> = vec![&views[0]];
        let extra = (cfg.views_per_step - 1).min(neighbours);
        let mut picks = rand::seq::index::sample(&mut rng, neighbours, extra).into_vec();
        picks.sort_unstable();
        chosen.extend(picks.into_iter().map(|i| &views[i + 1]));
        let eval = evaluate(scene, &source, &chosen, &pairs, cfg)?;
        if !eval.breakdown.total.is_finite() {
            return Err(Error::Numerical(format!(
                "frame {k}, epoch {epoch}, step {step}: total loss is {} ({:?})",
                eval.breakdown.total, eval.breakdown
            )));
        }
        history.push(eval.breakdown);
        opt.apply(scene, &eval.grad, cfg);
    }
    Ok(())
}

/// Jointly optimizes every frame's scene. Within an epoch each frame
/// regularizes against the other frames' scenes as they were when the epoch
/// began, so frames are optimized independently and in parallel.
pub fn optimize_video(bundle: &VideoBundle, cfg: &OptimConfig) -> Result<OptimizedVideo> {
    cfg.validate()?;
    bundle.validate()?;
    let mut scenes = build_scenes(bundle, &cfg.scene_init)?;
    let mut opts: Vec<SceneOptimizer> = scenes.iter().map(SceneOptimizer::new).collect();
    let mut history = vec![Vec::new(); bundle.len()];
    for epoch in 0..cfg.epochs {
        let snapshot = scenes.clone();
        scenes
            .par_iter_mut()
            .zip(opts.par_iter_mut())
            .zip(history.par_iter_mut())
            .map(|((scene, opt), hist)| run_epoch(scene, opt, bundle, &snapshot, epoch, cfg, hist))
            .collect::<Result<Vec<()>>>()?;
    }
    Ok(OptimizedVideo { scenes, history })
}

/// Optimizes frame `k` alone; regularization partners keep their initial
/// scenes.
pub fn optimize_scene(k: usize, bundle: &VideoBundle, cfg: &OptimConfig) -> Result<(GaussianScene, Vec<LossBreakdown>)> {
    cfg.validate()?;
    bundle.validate()?;
    if k >= bundle.len() {
        return Err(Error::invalid(format!("frame {k} outside a {}-frame bundle", bundle.len())));
    }
    let snapshot = build_scenes(bundle, &cfg.scene_init)?;
    let mut scene = snapshot[k].clone();
    let mut opt = SceneOptimizer::new(&scene);
    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        run_epoch(&mut scene, &mut opt, bundle, &snapshot, epoch, cfg, &mut history)?;
    }
    Ok((scene, history))
}

#[cfg(test)]
mod tests;
