//! Full-frame video stabilization by local Gaussian-splat reconstruction.
//!
//! Every frame of an unstable video is lifted into a per-pixel Gaussian
//! splat scene using its depth map. The scenes are refined at test time
//! against neighbouring frames (with dynamic objects compensated through
//! flow decomposition and cross-frame regularization), then re-rendered at
//! poses obtained by Gaussian filtering of the camera trajectory.
//!
//! Pose convention: every [`Pose`] is camera-to-world. Pixel `(u, v)` is the
//! centre of column `u`, row `v`; the camera looks down `+z`, `+x` right,
//! `+y` down.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod optimize;
pub mod rolling_shutter;
pub mod scale_align;
pub mod splat;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, DepthMap, Pose};
pub use grid::{Grid, Image, Mask, Rgb};
pub use trajectory::{SmoothingConfig, Trajectory};
pub use bundle::VideoBundle;
pub use flow::FlowField;
pub use optimize::{LossBreakdown, OptimConfig};
pub use splat::{GaussianPrimitive, GaussianScene, RenderOutput};
pub use synth::SceneSpec;
