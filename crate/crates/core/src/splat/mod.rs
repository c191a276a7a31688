//! Per-pixel Gaussian splat scenes and their differentiable renderer.

mod raster;

pub use raster::{
    falloff, render, render_backward, render_primitives, render_primitives_backward, RenderOutput, RenderUpstream, ALPHA_MAX,
    COV_DILATION, MAHALANOBIS_CUTOFF, NEAR_PLANE, TILE_SIZE, TRANSMITTANCE_MIN,
};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Pose};
use crate::grid::{Grid, Image};

/// Number of scalars per primitive in flat parameter layouts and dumps.
pub const PARAMS_PER_PRIMITIVE: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrimitive {
    /// World-space mean, always `anchor + offset`.
    pub mu: Vector3<f64>,
    /// Per-axis log standard deviation in meters.
    pub scale: Vector3<f64>,
    /// Orientation quaternion `[w, x, y, z]`; normalized when rendering.
    pub rot: [f64; 4],
    pub alpha_logit: f64,
    pub color: [f64; 3],
    pub offset: Vector3<f64>,
}

impl GaussianPrimitive {
    pub fn anchor(&self) -> Vector3<f64> {
        self.mu - self.offset
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.alpha_logit)
    }

    /// Layout: mu(3) scale(3) rot(4) alpha_logit(1) color(3) offset(3).
    pub fn to_array(&self) -> [f64; PARAMS_PER_PRIMITIVE] {
        let mut a = [0.0; PARAMS_PER_PRIMITIVE];
        a[0..3].copy_from_slice(self.mu.as_slice());
        a[3..6].copy_from_slice(self.scale.as_slice());
        a[6..10].copy_from_slice(&self.rot);
        a[10] = self.alpha_logit;
        a[11..14].copy_from_slice(&self.color);
        a[14..17].copy_from_slice(self.offset.as_slice());
        a
    }

    pub fn from_array(a: &[f64; PARAMS_PER_PRIMITIVE]) -> Self {
        GaussianPrimitive {
            mu: Vector3::new(a[0], a[1], a[2]),
            scale: Vector3::new(a[3], a[4], a[5]),
            rot: [a[6], a[7], a[8], a[9]],
            alpha_logit: a[10],
            color: [a[11], a[12], a[13]],
            offset: Vector3::new(a[14], a[15], a[16]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Gradient of a scalar loss with respect to every primitive field. The
/// mean is a function of the offset (`mu = anchor + offset`), so `offset`
/// carries the same gradient as `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PrimitiveGrad {
    pub mu: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rot: [f64; 4],
    pub alpha_logit: f64,
    pub color: [f64; 3],
    pub offset: Vector3<f64>,
}

impl PrimitiveGrad {
    pub fn add_assign(&mut self, o: &PrimitiveGrad) {
        self.mu += o.mu;
        self.scale += o.scale;
        for i in 0..4 {
            self.rot[i] += o.rot[i];
        }
        self.alpha_logit += o.alpha_logit;
        for i in 0..3 {
            self.color[i] += o.color[i];
        }
        self.offset += o.offset;
    }

    pub fn scaled(&self, s: f64) -> PrimitiveGrad {
        PrimitiveGrad {
            mu: self.mu * s,
            scale: self.scale * s,
            rot: self.rot.map(|v| v * s),
            alpha_logit: self.alpha_logit * s,
            color: self.color.map(|v| v * s),
            offset: self.offset * s,
        }
    }

    pub fn to_array(&self) -> [f64; PARAMS_PER_PRIMITIVE] {
        GaussianPrimitive {
            mu: self.mu,
            scale: self.scale,
            rot: self.rot,
            alpha_logit: self.alpha_logit,
            color: self.color,
            offset: self.offset,
        }
        .to_array()
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Accumulates `scale · other` into `acc` primitive by primitive.
pub fn accumulate_grads(acc: &mut [PrimitiveGrad], other: &[PrimitiveGrad], scale: f64) {
    for (a, o) in acc.iter_mut().zip(other) {
        a.add_assign(&o.scaled(scale));
    }
}

/// A local reconstruction: one primitive per valid source pixel and layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub primitives: Vec<GaussianPrimitive>,
    pub source_frame: usize,
    pub width: usize,
    pub height: usize,
    pub layers: usize,
    /// Source pixel `(x, y)` and layer each primitive was lifted from.
    pub origins: Vec<(usize, usize, usize)>,
    /// Camera-space depth of each primitive's anchor at construction.
    pub anchor_depths: Vec<f64>,
    /// The depth map the scene was built from.
    pub depth: DepthMap,
}

impl GaussianScene {
    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Primitive index per `(pixel, layer)`, `None` where depth was invalid.
    pub fn slot_grid(&self, layer: usize) -> Grid<Option<usize>> {
        let mut g = Grid::filled(self.width, self.height, None);
        for (i, &(x, y, l)) in self.origins.iter().enumerate() {
            if l == layer {
                g.set(x, y, Some(i));
            }
        }
        g
    }

    /// Re-derives every mean from its anchor and offset after an update.
    pub fn set_offset(&mut self, i: usize, offset: Vector3<f64>) {
        let p = &mut self.primitives[i];
        let anchor = p.anchor();
        p.offset = offset;
        p.mu = anchor + offset;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneInit {
    /// Isotropic scale in source-pixel footprints (`s0 · depth / fx`).
    pub pixel_footprint: f64,
    pub opacity: f64,
    pub layers: usize,
    /// Depth multiplier for the anchors of the second layer.
    pub second_layer_depth: f64,
}

impl Default for SceneInit {
    fn default() -> Self {
        SceneInit {
            pixel_footprint: 1.0,
            opacity: 0.8,
            layers: 1,
            second_layer_depth: 1.5,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Lifts every valid depth pixel into a primitive carrying that pixel's
/// colour.
pub fn build_scene(
    image: &Image,
    depth: &DepthMap,
    k: &CameraIntrinsics,
    pose: &Pose,
    source_frame: usize,
    init: &SceneInit,
) -> Result<GaussianScene> {
    image.ensure_dims(k.dims())?;
    depth.values.ensure_dims(k.dims())?;
    if init.layers == 0 || !(init.opacity > 0.0 && init.opacity < 1.0) || !(init.pixel_footprint > 0.0) {
        return Err(Error::invalid("bad scene initialization"));
    }
    if depth.valid.count() == 0 {
        return Err(Error::invalid("depth map has no valid pixels"));
    }
    let alpha_logit = logit(init.opacity);
    let q = pose.wxyz();
    let mut primitives = Vec::new();
    let mut origins = Vec::new();
    let mut anchor_depths = Vec::new();
    for layer in 0..init.layers {
        let depth_mul = if layer == 0 { 1.0 } else { init.second_layer_depth };
        for y in 0..k.height {
            for x in 0..k.width {
                let Some(d) = depth.at(x, y) else { continue };
                let d = d * depth_mul;
                let anchor = pose.transform_point(&(k.ray(x as f64, y as f64) * d));
                let s = (init.pixel_footprint * d / k.fx).ln();
                primitives.push(GaussianPrimitive {
                    mu: anchor,
                    scale: Vector3::repeat(s),
                    rot: q,
                    alpha_logit,
                    color: *image.get(x, y),
                    offset: Vector3::zeros(),
                });
                origins.push((x, y, layer));
                anchor_depths.push(d);
            }
        }
    }
    Ok(GaussianScene {
        primitives,
        source_frame,
        width: k.width,
        height: k.height,
        layers: init.layers,
        origins,
        anchor_depths,
        depth: depth.clone(),
    })
}
