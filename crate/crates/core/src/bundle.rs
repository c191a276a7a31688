//! The aligned per-frame inputs the pipeline works on.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geometry::{CameraIntrinsics, DepthMap, Pose};
use crate::grid::{Image, Mask};
use crate::rolling_shutter::GyroLog;
use crate::scale_align::SparsePointSet;

#[derive(Debug, Clone)]
pub struct VideoBundle {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<Image>,
    pub depths: Vec<DepthMap>,
    /// Total flows keyed by `(from, to)`, on the grid of `from`.
    pub flows: BTreeMap<(usize, usize), FlowField>,
    /// Ground-truth camera flows with the same keying, when known.
    pub camera_flows: BTreeMap<(usize, usize), FlowField>,
    /// Per-frame dynamic-object masks (true = dynamic).
    pub dynamic_masks: Option<Vec<Mask>>,
    pub poses: Vec<Pose>,
    pub poses_smooth: Option<Vec<Pose>>,
    pub gyro: Option<GyroLog>,
    pub points: Option<SparsePointSet>,
    /// Pixels synthesized by extrapolation rather than observed.
    pub fill_masks: Option<Vec<Mask>>,
    pub fps: f64,
}

impl VideoBundle {
    /// A bundle with only the required channels.
    pub fn new(
        intrinsics: CameraIntrinsics,
        frames: Vec<Image>,
        depths: Vec<DepthMap>,
        poses: Vec<Pose>,
        flows: BTreeMap<(usize, usize), FlowField>,
    ) -> Result<Self> {
        let b = VideoBundle {
            intrinsics,
            frames,
            depths,
            flows,
            camera_flows: BTreeMap::new(),
            dynamic_masks: None,
            poses,
            poses_smooth: None,
            gyro: None,
            points: None,
            fill_masks: None,
            fps: 30.0,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn flow(&self, from: usize, to: usize) -> Option<&FlowField> {
        self.flows.get(&(from, to))
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let n = self.frames.len();
        if n == 0 {
            return Err(Error::invalid("bundle has no frames"));
        }
        let count = |what: &str, len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what}: expected {n} entries, found {len}")))
            }
        };
        count("depths", self.depths.len())?;
        count("poses", self.poses.len())?;
        if let Some(m) = &self.dynamic_masks {
            count("dynamic masks", m.len())?;
        }
        if let Some(p) = &self.poses_smooth {
            count("smooth poses", p.len())?;
        }
        if let Some(m) = &self.fill_masks {
            count("fill masks", m.len())?;
        }
        let dims = self.intrinsics.dims();
        for f in &self.frames {
            f.ensure_dims(dims)?;
        }
        for d in &self.depths {
            d.values.ensure_dims(dims)?;
        }
        for masks in [&self.dynamic_masks, &self.fill_masks].into_iter().flatten() {
            for m in masks {
                m.ensure_dims(dims)?;
            }
        }
        for (&(a, b), f) in self.flows.iter().chain(&self.camera_flows) {
            if a >= n || b >= n {
                return Err(Error::invalid(format!("flow {a}->{b} references a missing frame")));
            }
            f.disp.ensure_dims(dims)?;
        }
        if !(self.fps > 0.0) {
            return Err(Error::invalid("frame rate must be positive"));
        }
        Ok(())
    }
}
