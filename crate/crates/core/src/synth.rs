//! Procedural ground-truth scenes: textured planes plus one rigid moving
//! object, ray cast analytically so depth and flow are exact.

use std::collections::BTreeMap;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::VideoBundle;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geometry::{project_point, renormalize, CameraIntrinsics, DepthMap, Pose, MIN_DEPTH};
use crate::grid::{Grid, Image, Mask};
use crate::rolling_shutter::{frame_target_rotation, GyroLog, GyroSample, OisLog, RowTiming};
use crate::scale_align::SparsePointSet;

/// Gyro samples per frame interval.
pub const GYRO_RATE_MULTIPLIER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    /// Bilinearly interpolated random lattice colors.
    #[default]
    ValueNoise,
    Checker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    #[serde(default)]
    pub kind: TextureKind,
    /// Lattice spacing in world units.
    pub cell: f64,
    #[serde(default)]
    pub seed: u64,
}

impl TextureSpec {
    pub fn noise(cell: f64, seed: u64) -> Self {
        TextureSpec { kind: TextureKind::ValueNoise, cell, seed }
    }

    fn lattice(&self, i: i64, j: i64) -> [f64; 3] {
        match self.kind {
            TextureKind::ValueNoise => {
                let h = hash3(self.seed, i as u64, j as u64);
                std::array::from_fn(|c| {
                    let bits = (h >> (c * 21)) & 0x1f_ffff;
                    0.1 + 0.8 * bits as f64 / 0x1f_ffff as f64
                })
            }
            TextureKind::Checker => {
                let dark = (i + j).rem_euclid(2) == 0;
                let base = hash3(self.seed, 0, 0);
                let tint = 0.1 * ((base & 0xff) as f64 / 255.0);
                if dark {
                    [0.15 + tint, 0.15, 0.2]
                } else {
                    [0.85, 0.8 - tint, 0.75]
                }
            }
        }
    }

    /// Color at surface coordinates `(s, t)`.
    pub fn color(&self, s: f64, t: f64) -> [f64; 3] {
        let (u, v) = (s / self.cell, t / self.cell);
        if self.kind == TextureKind::Checker {
            return self.lattice(u.floor() as i64, v.floor() as i64);
        }
        let (i, j) = (u.floor(), v.floor());
        let (fu, fv) = (u - i, v - j);
        let (i, j) = (i as i64, j as i64);
        let c00 = self.lattice(i, j);
        let c10 = self.lattice(i + 1, j);
        let c01 = self.lattice(i, j + 1);
        let c11 = self.lattice(i + 1, j + 1);
        std::array::from_fn(|c| {
            (1.0 - fv) * ((1.0 - fu) * c00[c] + fu * c10[c]) + fv * ((1.0 - fu) * c01[c] + fu * c11[c])
        })
    }
}

fn hash3(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(a.wrapping_mul(0xc2b2_ae3d_27d4_eb4f))
        .wrapping_add(b.wrapping_mul(0x1656_67b1_9e37_79f9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// In-plane orthonormal basis for texture coordinates.
fn plane_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.y.abs() < 0.9 { Vector3::y() } else { Vector3::x() };
    let a = helper.cross(n).normalize();
    let b = n.cross(&a);
    (a, b)
}

/// Infinite textured plane `{x : n·(x − point) = 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub point: [f64; 3],
    pub normal: [f64; 3],
    pub texture: TextureSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectShape {
    /// Square patch facing the given normal.
    Square { half_size: f64, normal: [f64; 3] },
    /// Cylinder with a vertical (world y) axis; `center` is the axis midpoint.
    Cylinder { radius: f64, half_height: f64 },
}

/// Rigid object translating at constant velocity (world units per second).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: ObjectShape,
    pub center: [f64; 3],
    pub velocity: [f64; 3],
    pub texture: TextureSpec,
}

/// Smooth base path plus seeded shake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    #[serde(default)]
    pub start: [f64; 3],
    /// World units per second.
    #[serde(default)]
    pub velocity: [f64; 3],
    /// Rotation-vector rate in degrees per second.
    #[serde(default)]
    pub angular_velocity_deg: [f64; 3],
    /// Per-axis translation jitter standard deviation (world units).
    #[serde(default)]
    pub jitter_translation: f64,
    /// Per-axis small-angle rotation jitter standard deviation (degrees).
    #[serde(default)]
    pub jitter_rotation_deg: f64,
    /// Moving-average radius (frames) applied to the jitter; 0 = white.
    #[serde(default)]
    pub jitter_lowpass: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            start: [0.0; 3],
            velocity: [0.0; 3],
            angular_velocity_deg: [0.0; 3],
            jitter_translation: 0.0,
            jitter_rotation_deg: 0.0,
            jitter_lowpass: 0,
            seed: 0,
        }
    }
}

fn default_fps() -> f64 {
    30.0
}

fn default_sparse_points() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub camera: CameraIntrinsics,
    pub frames: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    pub planes: Vec<PlaneSpec>,
    #[serde(default)]
    pub object: Option<ObjectSpec>,
    #[serde(default)]
    pub trajectory: TrajectorySpec,
    /// Flows are emitted for every ordered pair with `0 < |i − k| ≤ radius`;
    /// `None` means all pairs.
    #[serde(default)]
    pub flow_radius: Option<usize>,
    #[serde(default = "default_sparse_points")]
    pub sparse_points: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    /// A fronto-parallel noise-textured wall at depth `depth` filling the view.
    pub fn textured_plane(camera: CameraIntrinsics, frames: usize, depth: f64) -> Self {
        SceneSpec {
            camera,
            frames,
            fps: default_fps(),
            planes: vec![PlaneSpec {
                point: [0.0, 0.0, depth],
                normal: [0.0, 0.0, -1.0],
                texture: TextureSpec::noise(0.06 * depth * 100.0 / camera.fx, 7),
            }],
            object: None,
            trajectory: TrajectorySpec::default(),
            flow_radius: None,
            sparse_points: default_sparse_points(),
            seed: 0,
        }
    }

    /// Back wall and floor seen by a slowly translating, shaking camera,
    /// with an optional cylinder crossing the view. Texture cells span
    /// roughly eight pixels on the wall.
    pub fn room(width: usize, height: usize, frames: usize, with_object: bool, seed: u64) -> Self {
        let f = 0.95 * width as f64;
        let camera = CameraIntrinsics {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        };
        let wall = 6.0;
        let object = with_object.then(|| ObjectSpec {
            shape: ObjectShape::Cylinder { radius: 0.5, half_height: 1.0 },
            center: [-0.8, 0.3, 4.0],
            velocity: [1.2, 0.0, 0.0],
            texture: TextureSpec::noise(0.18, seed.wrapping_add(3)),
        });
        SceneSpec {
            camera,
            frames,
            fps: default_fps(),
            planes: vec![
                PlaneSpec {
                    point: [0.0, 0.0, wall],
                    normal: [0.0, 0.0, -1.0],
                    texture: TextureSpec::noise(8.0 * wall / f, seed.wrapping_add(1)),
                },
                PlaneSpec {
                    point: [0.0, 1.5, 0.0],
                    normal: [0.0, -1.0, 0.0],
                    texture: TextureSpec::noise(0.3, seed.wrapping_add(2)),
                },
            ],
            object,
            trajectory: TrajectorySpec {
                start: [0.0; 3],
                velocity: [0.3, 0.0, 0.15],
                angular_velocity_deg: [0.0, 2.0, 0.0],
                jitter_translation: 0.01,
                jitter_rotation_deg: 0.4,
                jitter_lowpass: 1,
                seed,
            },
            flow_radius: None,
            sparse_points: default_sparse_points(),
            seed,
        }
    }

    pub fn frame_time(&self, k: usize) -> f64 {
        k as f64 / self.fps
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.frames < 2 {
            return Err(Error::invalid("a synthetic scene needs at least 2 frames"));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::invalid("frame rate must be positive"));
        }
        if self.planes.is_empty() && self.object.is_none() {
            return Err(Error::invalid("scene has no geometry"));
        }
        for p in &self.planes {
            if !(Vector3::from(p.normal).norm() > 0.0) {
                return Err(Error::invalid("plane normal must be non-zero"));
            }
            if !(p.texture.cell > 0.0) {
                return Err(Error::invalid("texture cell must be positive"));
            }
        }
        if let Some(o) = &self.object {
            if !(o.texture.cell > 0.0) {
                return Err(Error::invalid("texture cell must be positive"));
            }
            match &o.shape {
                ObjectShape::Square { half_size, normal } => {
                    if !(*half_size > 0.0) || !(Vector3::from(*normal).norm() > 0.0) {
                        return Err(Error::invalid("square needs a positive size and a non-zero normal"));
                    }
                }
                ObjectShape::Cylinder { radius, half_height } => {
                    if !(*radius > 0.0 && *half_height > 0.0) {
                        return Err(Error::invalid("cylinder needs a positive radius and height"));
                    }
                }
            }
        }
        let t = &self.trajectory;
        if !(t.jitter_translation >= 0.0 && t.jitter_rotation_deg >= 0.0) {
            return Err(Error::invalid("jitter amplitudes must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Camera-space depth.
    pub depth: f64,
    pub point: Vector3<f64>,
    pub color: [f64; 3],
    pub dynamic: bool,
}

/// Geometry with normalized directions, ready for intersection.
struct Scene<'a> {
    spec: &'a SceneSpec,
    planes: Vec<(Vector3<f64>, Vector3<f64>, (Vector3<f64>, Vector3<f64>))>,
}

impl<'a> Scene<'a> {
    fn new(spec: &'a SceneSpec) -> Self {
        let planes = spec
            .planes
            .iter()
            .map(|p| {
                let n = Vector3::from(p.normal).normalize();
                (Vector3::from(p.point), n, plane_basis(&n))
            })
            .collect();
        Scene { spec, planes }
    }

    fn object_center(&self, time: f64) -> Option<Vector3<f64>> {
        self.spec
            .object
            .as_ref()
            .map(|o| Vector3::from(o.center) + Vector3::from(o.velocity) * time)
    }

    /// Nearest surface along `origin + t·dir` with `t > MIN_DEPTH`, where `t`
    /// is camera depth because `dir` has unit camera-z component.
    fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, time: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut consider = |t: f64, color: [f64; 3], dynamic: bool| {
            if t > MIN_DEPTH && best.is_none_or(|b| t < b.depth) {
                best = Some(Hit { depth: t, point: origin + dir * t, color, dynamic });
            }
        };
        for (i, (p0, n, (a, b))) in self.planes.iter().enumerate() {
            let den = n.dot(dir);
            if den.abs() < 1e-12 {
                continue;
            }
            let t = n.dot(&(p0 - origin)) / den;
            if t > MIN_DEPTH {
                let rel = origin + dir * t - p0;
                consider(t, self.spec.planes[i].texture.color(rel.dot(a), rel.dot(b)), false);
            }
        }
        if let (Some(o), Some(c)) = (&self.spec.object, self.object_center(time)) {
            if let Some((t, s, v)) = intersect_object(&o.shape, &c, origin, dir) {
                consider(t, o.texture.color(s, v), true);
            }
        }
        best
    }
}

/// Returns the ray parameter and the surface texture coordinates.
fn intersect_object(
    shape: &ObjectShape,
    center: &Vector3<f64>,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Option<(f64, f64, f64)> {
    match shape {
        ObjectShape::Square { half_size, normal } => {
            let n = Vector3::from(*normal).normalize();
            let den = n.dot(dir);
            if den.abs() < 1e-12 {
                return None;
            }
            let t = n.dot(&(center - origin)) / den;
            let rel = origin + dir * t - center;
            let (a, b) = plane_basis(&n);
            let (s, v) = (rel.dot(&a), rel.dot(&b));
            (t > MIN_DEPTH && s.abs() <= *half_size && v.abs() <= *half_size).then_some((t, s, v))
        }
        ObjectShape::Cylinder { radius, half_height } => {
            let (ox, oz) = (origin.x - center.x, origin.z - center.z);
            let a = dir.x * dir.x + dir.z * dir.z;
            if a < 1e-18 {
                return None;
            }
            let b = 2.0 * (ox * dir.x + oz * dir.z);
            let c = ox * ox + oz * oz - radius * radius;
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                if t <= MIN_DEPTH {
                    continue;
                }
                let p = origin + dir * t - center;
                if p.y.abs() <= *half_height {
                    let arc = p.z.atan2(p.x) * radius;
                    return Some((t, arc, p.y));
                }
            }
            None
        }
    }
}

fn check_camera_outside(spec: &SceneSpec, scene: &Scene<'_>, poses: &[Pose]) -> Result<()> {
    let Some(o) = &spec.object else { return Ok(()) };
    for (k, pose) in poses.iter().enumerate() {
        let c = scene.object_center(spec.frame_time(k)).unwrap_or_default();
        let rel = pose.translation - c;
        if let ObjectShape::Cylinder { radius, half_height } = o.shape {
            if rel.x * rel.x + rel.z * rel.z <= radius * radius && rel.y.abs() <= half_height {
                return Err(Error::invalid(format!("camera of frame {k} is inside the object")));
            }
        }
    }
    Ok(())
}

/// Smooth and shaken camera paths for a spec.
pub fn trajectories(spec: &SceneSpec) -> (Vec<Pose>, Vec<Pose>) {
    let t = &spec.trajectory;
    let n = spec.frames;
    let smooth: Vec<Pose> = (0..n)
        .map(|k| {
            let time = spec.frame_time(k);
            let rotvec = Vector3::from(t.angular_velocity_deg).map(f64::to_radians) * time;
            let c = Vector3::from(t.start) + Vector3::from(t.velocity) * time;
            Pose::new(UnitQuaternion::from_scaled_axis(rotvec), c)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
    let mut white = |sigma: f64| -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::from_fn(|_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * sigma
                })
            })
            .collect()
    };
    let jt = lowpass(&white(t.jitter_translation), t.jitter_lowpass);
    let jr = lowpass(&white(t.jitter_rotation_deg.to_radians()), t.jitter_lowpass);
    let shaky = smooth
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let r = renormalize(p.rotation * UnitQuaternion::from_scaled_axis(jr[k]));
            Pose::new(r, p.translation + jt[k])
        })
        .collect();
    (smooth, shaky)
}

/// Centered moving average with the window truncated at the ends.
fn lowpass(v: &[Vector3<f64>], radius: usize) -> Vec<Vector3<f64>> {
    if radius == 0 {
        return v.to_vec();
    }
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(v.len() - 1);
            v[lo..=hi].iter().sum::<Vector3<f64>>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Ray-casts one frame: per-pixel hits at `pose` and scene time `time`.
fn cast_frame(scene: &Scene<'_>, k: &CameraIntrinsics, pose: &Pose, time: f64) -> Grid<Option<Hit>> {
    let r = pose.rotation_matrix();
    let rows: Vec<Vec<Option<Hit>>> = (0..k.height)
        .into_par_iter()
        .map(|y| {
            (0..k.width)
                .map(|x| scene.cast(&pose.translation, &(r * k.ray(x as f64, y as f64)), time))
                .collect()
        })
        .collect();
    Grid::from_vec(k.width, k.height, rows.into_iter().flatten().collect()).expect("row-major frame")
}

fn hits_to_image(hits: &Grid<Option<Hit>>) -> Image {
    hits.map(|h| h.map_or([0.0; 3], |h| h.color))
}

fn hits_to_depth(hits: &Grid<Option<Hit>>) -> DepthMap {
    DepthMap {
        values: hits.map(|h| h.map_or(0.0, |h| h.depth)),
        valid: hits.map(Option::is_some),
    }
}

/// Renders the scene from an arbitrary camera at scene time `time`.
pub fn render_view(spec: &SceneSpec, k: &CameraIntrinsics, pose: &Pose, time: f64) -> (Image, DepthMap) {
    let hits = cast_frame(&Scene::new(spec), k, pose, time);
    (hits_to_image(&hits), hits_to_depth(&hits))
}

/// Total and camera flows from frame `i` (hits at its time) into `pose_k`
/// at time offset `dt`.
fn pair_flows(
    hits: &Grid<Option<Hit>>,
    velocity: Vector3<f64>,
    dt: f64,
    k: &CameraIntrinsics,
    pose_k: &Pose,
) -> (FlowField, FlowField) {
    let (w, h) = hits.dims();
    let mut total = FlowField::zeros(w, h);
    let mut cam = FlowField::zeros(w, h);
    for (x, y, hit) in hits.enumerate() {
        let Some(hit) = hit else { continue };
        let p = Vector2::new(x as f64, y as f64);
        let c = project_point(&hit.point, k, pose_k);
        if c.valid {
            cam.disp.set(x, y, c.pixel - p);
            cam.valid.set(x, y, true);
        }
        let moved = if hit.dynamic { hit.point + velocity * dt } else { hit.point };
        let t = project_point(&moved, k, pose_k);
        if t.valid {
            total.disp.set(x, y, t.pixel - p);
            total.valid.set(x, y, true);
        }
    }
    (total, cam)
}

/// Generates the full ground-truth bundle for `spec`.
pub fn generate(spec: &SceneSpec) -> Result<VideoBundle> {
    spec.validate()?;
    let scene = Scene::new(spec);
    let k = spec.camera;
    let (smooth, shaky) = trajectories(spec);
    check_camera_outside(spec, &scene, &shaky)?;
    let n = spec.frames;
    let hits: Vec<Grid<Option<Hit>>> = (0..n)
        .map(|f| cast_frame(&scene, &k, &shaky[f], spec.frame_time(f)))
        .collect();
    for (f, hs) in hits.iter().enumerate() {
        if hs.iter().all(Option::is_none) {
            return Err(Error::invalid(format!("frame {f} sees no geometry")));
        }
    }
    let velocity = spec.object.as_ref().map_or(Vector3::zeros(), |o| Vector3::from(o.velocity));
    let radius = spec.flow_radius.unwrap_or(n);
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i && i.abs_diff(j) <= radius).map(move |j| (i, j)))
        .collect();
    let computed: Vec<((usize, usize), (FlowField, FlowField))> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let dt = spec.frame_time(j) - spec.frame_time(i);
            ((i, j), pair_flows(&hits[i], velocity, dt, &k, &shaky[j]))
        })
        .collect();
    let mut flows = BTreeMap::new();
    let mut camera_flows = BTreeMap::new();
    for (key, (t, c)) in computed {
        flows.insert(key, t);
        camera_flows.insert(key, c);
    }
    let frames = hits.iter().map(hits_to_image).collect();
    let depths = hits.iter().map(hits_to_depth).collect();
    let dynamic_masks = hits.iter().map(|h| h.map(|h| h.is_some_and(|h| h.dynamic))).collect::<Vec<Mask>>();
    let gyro = gyro_from_poses(&shaky, spec.fps)?;
    let points = sparse_points(spec, &scene, &hits, &shaky)?;
    let bundle = VideoBundle {
        intrinsics: k,
        frames,
        depths,
        flows,
        camera_flows,
        dynamic_masks: spec.object.is_some().then_some(dynamic_masks),
        poses: shaky,
        poses_smooth: Some(smooth),
        gyro: Some(gyro),
        points: Some(points),
        fill_masks: None,
        fps: spec.fps,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Camera rotations sampled at [`GYRO_RATE_MULTIPLIER`]× the frame rate,
/// slerped between frame orientations.
pub fn gyro_from_poses(poses: &[Pose], fps: f64) -> Result<GyroLog> {
    let m = GYRO_RATE_MULTIPLIER;
    let mut samples = Vec::with_capacity(poses.len() * m);
    for (f, pair) in poses.windows(2).enumerate() {
        for s in 0..m {
            let a = s as f64 / m as f64;
            let rotation = pair[0].rotation.slerp(&pair[1].rotation, a);
            samples.push(GyroSample { t: (f as f64 + a) / fps, rotation });
        }
    }
    let last = poses.len() - 1;
    samples.push(GyroSample { t: last as f64 / fps, rotation: poses[last].rotation });
    GyroLog::new(samples)
}

/// Random static surface points with exact per-frame visibility.
fn sparse_points(
    spec: &SceneSpec,
    scene: &Scene<'_>,
    hits: &[Grid<Option<Hit>>],
    poses: &[Pose],
) -> Result<SparsePointSet> {
    let k = spec.camera;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f90_1e75);
    let mut points = Vec::new();
    let mut attempts = 0;
    while points.len() < spec.sparse_points && attempts < spec.sparse_points * 20 {
        attempts += 1;
        let f = rng.random_range(0..hits.len());
        let (x, y) = (rng.random_range(0..k.width), rng.random_range(0..k.height));
        if let Some(h) = hits[f].get(x, y) {
            if !h.dynamic {
                points.push(h.point);
            }
        }
    }
    let mut visibility: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (f, pose) in poses.iter().enumerate() {
        let r = pose.rotation_matrix();
        let vis: Vec<usize> = points
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                let pr = project_point(p, &k, pose);
                let inside = pr.valid
                    && (0.0..=(k.width - 1) as f64).contains(&pr.pixel.x)
                    && (0.0..=(k.height - 1) as f64).contains(&pr.pixel.y);
                inside
                    && scene
                        .cast(&pose.translation, &(r * k.ray(pr.pixel.x, pr.pixel.y)), spec.frame_time(f))
                        .is_some_and(|h| !h.dynamic && (h.depth - pr.depth).abs() <= 1e-6 * pr.depth.max(1.0))
            })
            .map(|(i, _)| i)
            .collect();
        visibility.insert(f, vis);
    }
    SparsePointSet::new(points, visibility)
}

/// Constant-rate rotation applied during each frame's readout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationRamp {
    /// Rotation axis in camera coordinates.
    pub axis: [f64; 3],
    /// Degrees accumulated over one full readout.
    pub degrees_per_readout: f64,
}

impl RotationRamp {
    pub fn yaw(degrees_per_readout: f64) -> Self {
        RotationRamp { axis: [0.0, 1.0, 0.0], degrees_per_readout }
    }

    fn at(&self, fraction: f64) -> UnitQuaternion<f64> {
        let axis = Vector3::from(self.axis);
        if axis.norm() == 0.0 || self.degrees_per_readout == 0.0 {
            return UnitQuaternion::identity();
        }
        UnitQuaternion::from_scaled_axis(axis.normalize() * (self.degrees_per_readout.to_radians() * fraction))
    }
}

#[derive(Debug, Clone)]
pub struct RsWarped {
    pub frames: Vec<Image>,
    /// Global-shutter renders at each frame's correction target orientation.
    pub reference: Vec<Image>,
    pub gyro: GyroLog,
    pub ois: OisLog,
    pub timings: Vec<RowTiming>,
}

/// Gyro samples per readout window; odd so the window is symmetric.
const RS_GYRO_SAMPLES: usize = 33;

/// Re-renders every row of every frame at its own exposure orientation.
/// `readout` is in seconds and must not exceed the frame interval. The
/// scene is frozen at each frame's time; only the camera rotates.
pub fn rs_warp(spec: &SceneSpec, bundle: &VideoBundle, readout: f64, ramp: &RotationRamp) -> Result<RsWarped> {
    spec.validate()?;
    if !(readout > 0.0 && readout < 1.0 / spec.fps) {
        return Err(Error::invalid("readout must lie inside one frame interval"));
    }
    if bundle.len() != spec.frames {
        return Err(Error::invalid("bundle does not match the scene spec"));
    }
    let scene = Scene::new(spec);
    let k = spec.camera;
    let h = k.height;
    let rotation_at = |f: usize, t: f64| {
        let frac = (t - spec.frame_time(f)) / readout;
        renormalize(bundle.poses[f].rotation * ramp.at(frac))
    };
    let timings: Vec<RowTiming> = (0..spec.frames)
        .map(|f| RowTiming { frame_start: spec.frame_time(f), readout })
        .collect();
    let mut samples = Vec::new();
    for (f, timing) in timings.iter().enumerate() {
        for s in 0..RS_GYRO_SAMPLES {
            let t = timing.frame_start + readout * s as f64 / (RS_GYRO_SAMPLES - 1) as f64;
            samples.push(GyroSample { t, rotation: rotation_at(f, t) });
        }
    }
    let gyro = GyroLog::new(samples)?;
    let mut frames = Vec::with_capacity(spec.frames);
    let mut reference = Vec::with_capacity(spec.frames);
    for (f, timing) in timings.iter().enumerate() {
        let time = spec.frame_time(f);
        let c = bundle.poses[f].translation;
        let rows: Vec<Vec<[f64; 3]>> = (0..h)
            .into_par_iter()
            .map(|y| {
                let r = rotation_at(f, timing.row_time(y as f64, h)).to_rotation_matrix();
                (0..k.width)
                    .map(|x| scene.cast(&c, &(r * k.ray(x as f64, y as f64)), time).map_or([0.0; 3], |h| h.color))
                    .collect()
            })
            .collect();
        frames.push(Grid::from_vec(k.width, h, rows.into_iter().flatten().collect())?);
        let target = frame_target_rotation(&gyro, timing, h);
        let (img, _) = render_view(spec, &k, &Pose::new(target, c), time);
        reference.push(img);
    }
    Ok(RsWarped { frames, reference, gyro, ois: OisLog::zero(), timings })
}

/// Where raw pixel `(u, v)` of frame `f` lands in the global-shutter
/// camera with orientation `target`, traced through the scene geometry.
pub fn rs_ground_truth(
    spec: &SceneSpec,
    bundle: &VideoBundle,
    warped: &RsWarped,
    f: usize,
    u: f64,
    v: f64,
    target: &UnitQuaternion<f64>,
) -> Option<Vector2<f64>> {
    let k = spec.camera;
    let t = warped.timings[f].row_time(v, k.height);
    let rot = crate::rolling_shutter::interpolate_rotation(&warped.gyro, t).value;
    let c = bundle.poses[f].translation;
    let hit = Scene::new(spec).cast(&c, &(rot * k.ray(u, v)), spec.frame_time(f))?;
    let p = project_point(&hit.point, &k, &Pose::new(*target, c));
    p.valid.then_some(p.pixel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{camera_flow, object_flow};

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(60.0, 60.0, 23.5, 17.5, 48, 36).unwrap()
    }

    fn dynamic_spec() -> SceneSpec {
        let mut s = SceneSpec::textured_plane(cam(), 4, 8.0);
        s.object = Some(ObjectSpec {
            shape: ObjectShape::Cylinder { radius: 0.6, half_height: 1.0 },
            center: [0.0, 0.0, 5.0],
            velocity: [1.5, 0.0, 0.0],
            texture: TextureSpec::noise(0.2, 3),
        });
        s.trajectory.velocity = [0.3, 0.0, 0.0];
        s.trajectory.jitter_translation = 0.01;
        s.trajectory.jitter_rotation_deg = 0.3;
        s.trajectory.seed = 5;
        s.sparse_points = 50;
        s
    }

    #[test]
    fn static_scene_total_equals_camera_flow() {
        let mut s = dynamic_spec();
        s.object = None;
        let b = generate(&s).unwrap();
        assert!(b.dynamic_masks.is_none());
        for (key, f) in &b.flows {
            let c = &b.camera_flows[key];
            assert_eq!(f, c);
            let obj = object_flow(f, c).unwrap();
            assert!(obj.mean_magnitude().unwrap_or(0.0) < 1e-12);
        }
    }

    #[test]
    fn zero_jitter_gives_smooth_poses() {
        let mut s = dynamic_spec();
        s.trajectory.jitter_translation = 0.0;
        s.trajectory.jitter_rotation_deg = 0.0;
        let b = generate(&s).unwrap();
        assert_eq!(Some(&b.poses), b.poses_smooth.as_ref());
    }

    #[test]
    fn object_flow_confined_to_dynamic_mask() {
        let b = generate(&dynamic_spec()).unwrap();
        let masks = b.dynamic_masks.as_ref().unwrap();
        assert!(masks[0].count() > 20);
        for (key, f) in &b.flows {
            let obj = object_flow(f, &b.camera_flows[key]).unwrap();
            for (x, y, &v) in obj.valid.enumerate() {
                if v && !*masks[key.0].get(x, y) {
                    assert_eq!(obj.disp.get(x, y).norm(), 0.0);
                }
            }
        }
    }

    #[test]
    fn camera_flow_matches_depth_reprojection() {
        let b = generate(&dynamic_spec()).unwrap();
        for (&(i, j), cf) in &b.camera_flows {
            let ours = camera_flow(&b.depths[i], &b.poses[i], &b.poses[j], &b.intrinsics).unwrap();
            for (x, y, &v) in cf.valid.enumerate() {
                if v {
                    let d = (ours.disp.get(x, y) - cf.disp.get(x, y)).norm();
                    assert!(d < 1e-6, "pair {i}->{j} at ({x},{y}): {d}");
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&dynamic_spec()).unwrap();
        let b = generate(&dynamic_spec()).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.flows, b.flows);
        assert_eq!(a.poses, b.poses);
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn gyro_is_exact_at_frames() {
        let b = generate(&dynamic_spec()).unwrap();
        let g = b.gyro.as_ref().unwrap();
        assert_eq!(g.samples().len(), 4 * 3 + 1);
        for (f, p) in b.poses.iter().enumerate() {
            let q = crate::rolling_shutter::interpolate_rotation(g, f as f64 / 30.0).value;
            assert!(q.angle_to(&p.rotation) < 1e-9);
        }
    }

    #[test]
    fn sparse_points_project_onto_their_surface() {
        let b = generate(&dynamic_spec()).unwrap();
        let pts = b.points.as_ref().unwrap();
        assert!(!pts.points.is_empty());
        // Nearest-pixel depth differs only where rounding crosses an edge.
        let (mut agree, mut total) = (0, 0);
        for (&f, idx) in &pts.visibility {
            for &i in idx {
                let p = project_point(&pts.points[i], &b.intrinsics, &b.poses[f]);
                let (x, y) = (p.pixel.x.round() as usize, p.pixel.y.round() as usize);
                let d = b.depths[f].at(x, y).unwrap();
                total += 1;
                agree += usize::from((d - p.depth).abs() < 0.01 * d);
            }
        }
        assert!(total > 50 && agree * 100 >= total * 95, "{agree}/{total}");
    }

    #[test]
    fn camera_inside_cylinder_rejected() {
        let mut s = dynamic_spec();
        s.object.as_mut().unwrap().center = [0.0, 0.0, 0.0];
        s.object.as_mut().unwrap().velocity = [0.0; 3];
        assert!(generate(&s).is_err());
        let mut s = dynamic_spec();
        s.frames = 1;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = dynamic_spec();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<SceneSpec>(&text).unwrap(), s);
    }

    #[test]
    fn zero_ramp_leaves_frames_unchanged() {
        let s = dynamic_spec();
        let b = generate(&s).unwrap();
        let w = rs_warp(&s, &b, 0.02, &RotationRamp::yaw(0.0)).unwrap();
        assert_eq!(w.frames, b.frames);
    }

    #[test]
    fn yaw_ramp_shears_vertical_lines() {
        // Pure rotation about camera y: row v sees the world rotated by
        // θ(v) = θ_total·v/h, which moves the image center column by
        // fx·tan(θ(v)) relative to the target orientation.
        let mut s = SceneSpec::textured_plane(cam(), 2, 8.0);
        s.trajectory = TrajectorySpec::default();
        let b = generate(&s).unwrap();
        let deg = 2.0;
        let w = rs_warp(&s, &b, 0.02, &RotationRamp::yaw(deg)).unwrap();
        let k = s.camera;
        let target = frame_target_rotation(&w.gyro, &w.timings[0], k.height);
        for v in [0.0, 17.0, 35.0] {
            let got = rs_ground_truth(&s, &b, &w, 0, k.cx, v, &target).unwrap();
            let theta = (deg * v / k.height as f64 - deg * 0.5).to_radians();
            let expect = k.cx + k.fx * theta.tan();
            assert!((got.x - expect).abs() < 1e-3, "row {v}: {} vs {expect}", got.x);
        }
    }
}
