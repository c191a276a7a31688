//! Shared fixtures for the benchmarks.

use splatstab::optimize::build_scenes;
use splatstab::synth::generate;
use splatstab::{GaussianScene, SceneSpec, VideoBundle};

/// A synthetic room bundle of `frames` frames at `size`x`size` and its
/// initial scenes.
pub fn room(size: usize, frames: usize) -> (VideoBundle, Vec<GaussianScene>) {
    let mut spec = SceneSpec::room(size, size, frames, true, 3);
    spec.flow_radius = Some(2);
    let bundle = generate(&spec).expect("room spec renders");
    let scenes = build_scenes(&bundle, &Default::default()).expect("room depths are valid");
    (bundle, scenes)
}
