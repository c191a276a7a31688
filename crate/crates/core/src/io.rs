//! File formats and the on-disk bundle layout.
//!
//! ```text
//! <dir>/intrinsics.json        {fx, fy, cx, cy, width, height}
//! <dir>/poses.json             [{frame, q: [w,x,y,z], t: [x,y,z]}, ...]
//! <dir>/frames/%06d.png        8-bit RGB, read as linear [0,1]
//! <dir>/depths/%06d.pfm        metric depth, 0 where invalid
//! <dir>/flows/%06d_%06d.flo    total flow from the first index to the second
//! ```
//!
//! Optional: `camera_flows/` (same naming), `masks/%06d.png` (dynamic
//! objects, 255 = dynamic), `poses_smooth.json`, `gyro.jsonl`,
//! `points.json` and `meta.json` (`{"fps": ..}`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bundle::VideoBundle;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geometry::{CameraIntrinsics, DepthMap, Pose};
use crate::grid::{Grid, Image, Mask};
use crate::rolling_shutter::{GyroLog, GyroSample, OisLog, OisSample};
use crate::scale_align::SparsePointSet;
use crate::splat::{GaussianPrimitive, PARAMS_PER_PRIMITIVE};

pub const FLO_MAGIC: &[u8; 4] = b"PIEH";
/// Flow components above this magnitude mark unknown flow in `.flo` files.
pub const FLO_UNKNOWN_THRESHOLD: f32 = 1e9;
const FLO_UNKNOWN: f32 = 1e10;
pub const SCENE_MAGIC: &[u8; 4] = b"GAVS";
pub const SCENE_VERSION: u32 = 1;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::file(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

/// Attaches `path` to format errors.
fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::File { .. } => e,
        other => Error::file(path, other),
    })
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset, message: message.into() }
}

pub fn encode_pfm(values: &Grid<f64>) -> Vec<u8> {
    let (w, h) = values.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(*values.get(x, y) as f32).to_le_bytes());
        }
    }
    out
}

/// Splits off `n` whitespace-separated header tokens, returning them and the
/// payload offset (one whitespace byte after the last token).
fn header_tokens(bytes: &[u8], n: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(n);
    let mut i = 0;
    while tokens.len() < n {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i || i >= bytes.len() {
            return Err(format_err(start, "truncated header"));
        }
        let tok = std::str::from_utf8(&bytes[start..i]).map_err(|_| format_err(start, "header is not ASCII"))?;
        tokens.push(tok.to_string());
    }
    Ok((tokens, i + 1))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Grid<f64>> {
    let (tok, start) = header_tokens(bytes, 4)?;
    match tok[0].as_str() {
        "Pf" => {}
        "PF" => return Err(format_err(0, "color PFM where a single channel was expected")),
        other => return Err(format_err(0, format!("bad PFM magic {other:?}"))),
    }
    let dim = |s: &str| s.parse::<usize>().ok().filter(|&v| v > 0);
    let (Some(w), Some(h)) = (dim(&tok[1]), dim(&tok[2])) else {
        return Err(format_err(3, "bad PFM dimensions"));
    };
    let scale: f64 = tok[3].parse().map_err(|_| format_err(0, "bad PFM scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_err(0, "PFM scale must be a nonzero number"));
    }
    let little = scale < 0.0;
    let need = w * h * 4;
    if bytes.len() < start + need {
        return Err(format_err(bytes.len(), format!("truncated PFM payload: need {need} bytes")));
    }
    let mut data = vec![0.0; w * h];
    for row in 0..h {
        let y = h - 1 - row;
        for x in 0..w {
            let off = start + (row * w + x) * 4;
            let b: [u8; 4] = bytes[off..off + 4].try_into().unwrap();
            let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            if v.is_nan() {
                return Err(format_err(off, "NaN in PFM payload"));
            }
            data[y * w + x] = v as f64;
        }
    }
    Grid::from_vec(w, h, data)
}

/// Writes depths with invalid pixels stored as 0.
pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    let values = Grid::from_fn(depth.values.width(), depth.values.height(), |x, y| depth.at(x, y).unwrap_or(0.0));
    write_bytes(path, &encode_pfm(&values))
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let values = in_file(path, decode_pfm(&read_bytes(path)?))?;
    Ok(DepthMap::from_values(values))
}

/// Unknown (invalid) vectors are written as `1e10`.
pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let (w, h) = flow.dims();
    let mut out = Vec::with_capacity(12 + w * h * 8);
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            let (u, v) = match flow.at(x, y) {
                Some(d) => (d.x as f32, d.y as f32),
                None => (FLO_UNKNOWN, FLO_UNKNOWN),
            };
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(format_err(bytes.len(), "truncated .flo header"));
    }
    if &bytes[0..4] != FLO_MAGIC {
        return Err(format_err(0, "bad .flo magic, expected PIEH"));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if w <= 0 || h <= 0 {
        return Err(format_err(4, format!("bad .flo dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let need = 12 + w * h * 8;
    if bytes.len() < need {
        return Err(format_err(bytes.len(), format!("truncated .flo payload: need {need} bytes")));
    }
    let f = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let mut disp = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let (u, v) = (f(12 + 8 * i), f(16 + 8 * i));
        let ok = u.abs() < FLO_UNKNOWN_THRESHOLD && v.abs() < FLO_UNKNOWN_THRESHOLD;
        disp.push(if ok { Vector2::new(u as f64, v as f64) } else { Vector2::zeros() });
        valid.push(ok);
    }
    FlowField::from_parts(Grid::from_vec(w, h, disp)?, Grid::from_vec(w, h, valid)?)
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    write_bytes(path, &encode_flo(flow))
}

/// Reads a `.flo` file and checks its size against `dims`.
pub fn read_flo(path: &Path, dims: Option<(usize, usize)>) -> Result<FlowField> {
    let flow = in_file(path, decode_flo(&read_bytes(path)?))?;
    if let Some(d) = dims {
        in_file(path, flow.disp.ensure_dims(d))?;
    }
    Ok(flow)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let (w, h) = img.dims();
    let buf: Vec<u8> = img.iter().flat_map(|p| p.map(to_byte)).collect();
    let out = image::RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer matches dimensions");
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    out.save(path).map_err(|e| Error::file(path, e))
}

pub fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::file(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect();
    Grid::from_vec(w, h, data)
}

/// Grayscale PNG, 255 where the mask is set.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let (w, h) = mask.dims();
    let buf: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let out = image::GrayImage::from_raw(w as u32, h as u32, buf).expect("buffer matches dimensions");
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    out.save(path).map_err(|e| Error::file(path, e))
}

/// Pixels at or above mid-gray are set.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| Error::file(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Grid::from_vec(w, h, img.pixels().map(|p| p.0[0] >= 128).collect())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::file(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::file(path, e))?;
    write_bytes(path, text.as_bytes())
}

fn read_json_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::file(path, format!("line {}: {e}", i + 1))))
        .collect()
}

fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text += &serde_json::to_string(r).map_err(|e| Error::file(path, e))?;
        text.push('\n');
    }
    write_bytes(path, text.as_bytes())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseRecord {
    frame: usize,
    q: [f64; 4],
    t: [f64; 3],
}

pub fn poses_to_json(poses: &[Pose]) -> serde_json::Value {
    let records: Vec<PoseRecord> = poses
        .iter()
        .enumerate()
        .map(|(frame, p)| PoseRecord { frame, q: p.wxyz(), t: p.translation.into() })
        .collect();
    serde_json::to_value(records).expect("pose records serialize")
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    write_json(path, &poses_to_json(poses))
}

/// Reads a pose file; records may come in any order but must cover frames
/// `0..n` exactly once.
pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let mut records: Vec<PoseRecord> = read_json(path)?;
    records.sort_by_key(|r| r.frame);
    for (i, r) in records.iter().enumerate() {
        if r.frame != i {
            return Err(Error::file(path, format!("non-contiguous frames: expected frame {i}, found {}", r.frame)));
        }
    }
    records
        .iter()
        .map(|r| in_file(path, Pose::from_wxyz(r.q, r.t)))
        .collect()
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let k: CameraIntrinsics = read_json(path)?;
    in_file(path, k.validate())?;
    Ok(k)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GyroRecord {
    t: f64,
    q: [f64; 4],
}

pub fn write_gyro(path: &Path, log: &GyroLog) -> Result<()> {
    let rows: Vec<GyroRecord> = log
        .samples()
        .iter()
        .map(|s| {
            let q = s.rotation.quaternion();
            GyroRecord { t: s.t, q: [q.w, q.i, q.j, q.k] }
        })
        .collect();
    write_json_lines(path, &rows)
}

pub fn read_gyro(path: &Path) -> Result<GyroLog> {
    let rows: Vec<GyroRecord> = read_json_lines(path)?;
    let samples = rows
        .iter()
        .map(|r| {
            let q = nalgebra::Quaternion::new(r.q[0], r.q[1], r.q[2], r.q[3]);
            if !(q.norm() > 1e-12) || !r.t.is_finite() {
                return Err(Error::file(path, format!("bad gyro sample at t={}", r.t)));
            }
            Ok(GyroSample { t: r.t, rotation: UnitQuaternion::from_quaternion(q) })
        })
        .collect::<Result<Vec<_>>>()?;
    in_file(path, GyroLog::new(samples))
}

pub fn write_ois(path: &Path, log: &OisLog) -> Result<()> {
    write_json_lines(path, log.samples())
}

pub fn read_ois(path: &Path) -> Result<OisLog> {
    let rows: Vec<OisSample> = read_json_lines(path)?;
    in_file(path, OisLog::new(rows))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PointsRecord {
    points: Vec<[f64; 3]>,
    visibility: BTreeMap<usize, Vec<usize>>,
}

pub fn write_points(path: &Path, set: &SparsePointSet) -> Result<()> {
    let rec = PointsRecord { points: set.points.iter().map(|p| (*p).into()).collect(), visibility: set.visibility.clone() };
    write_json(path, &rec)
}

pub fn read_points(path: &Path) -> Result<SparsePointSet> {
    let rec: PointsRecord = read_json(path)?;
    in_file(path, SparsePointSet::new(rec.points.into_iter().map(Vector3::from).collect(), rec.visibility))
}

/// `GAVS` dump: magic, u32 version, u32 count, then 17 little-endian f32
/// per primitive in [`GaussianPrimitive::to_array`] order.
pub fn encode_scene(primitives: &[GaussianPrimitive]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + primitives.len() * PARAMS_PER_PRIMITIVE * 4);
    out.extend_from_slice(SCENE_MAGIC);
    out.extend_from_slice(&SCENE_VERSION.to_le_bytes());
    out.extend_from_slice(&(primitives.len() as u32).to_le_bytes());
    for p in primitives {
        for v in p.to_array() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_scene(bytes: &[u8]) -> Result<Vec<GaussianPrimitive>> {
    if bytes.len() < 12 {
        return Err(format_err(bytes.len(), "truncated scene header"));
    }
    if &bytes[0..4] != SCENE_MAGIC {
        return Err(format_err(0, "bad scene magic, expected GAVS"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SCENE_VERSION {
        return Err(format_err(4, format!("unsupported scene version {version}")));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let stride = PARAMS_PER_PRIMITIVE * 4;
    if bytes.len() < 12 + count * stride {
        return Err(format_err(bytes.len(), format!("truncated scene payload: {count} primitives declared")));
    }
    (0..count)
        .map(|i| {
            let base = 12 + i * stride;
            let mut a = [0.0; PARAMS_PER_PRIMITIVE];
            for (c, v) in a.iter_mut().enumerate() {
                let off = base + 4 * c;
                let x = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
                if !x.is_finite() {
                    return Err(format_err(off, "non-finite primitive parameter"));
                }
                *v = x as f64;
            }
            Ok(GaussianPrimitive::from_array(&a))
        })
        .collect()
}

pub fn write_scene(path: &Path, primitives: &[GaussianPrimitive]) -> Result<()> {
    write_bytes(path, &encode_scene(primitives))
}

pub fn read_scene(path: &Path) -> Result<Vec<GaussianPrimitive>> {
    in_file(path, decode_scene(&read_bytes(path)?))
}

pub fn frame_name(i: usize, ext: &str) -> String {
    format!("{i:06}.{ext}")
}

pub fn pair_name(a: usize, b: usize) -> String {
    format!("{a:06}_{b:06}.flo")
}

/// Numbered files `%06d.<ext>` in `dir`, which must run from 0 without gaps.
pub fn numbered_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut found = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::file(dir, e))? {
        let path = entry.map_err(|e| Error::file(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        let Some(i) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<usize>().ok()) else {
            continue;
        };
        found.insert(i, path);
    }
    for (n, &i) in found.keys().enumerate() {
        if i != n {
            return Err(Error::file(dir, format!("non-contiguous frames: expected {}, found {}", frame_name(n, ext), frame_name(i, ext))));
        }
    }
    Ok(found.into_values().collect())
}

fn pair_files(dir: &Path) -> Result<Vec<((usize, usize), PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::file(dir, e))? {
        let path = entry.map_err(|e| Error::file(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("flo") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let parsed = stem.split_once('_').and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
        let Some(key) = parsed else {
            return Err(Error::file(&path, "flow file name must be <from>_<to>.flo"));
        };
        out.push((key, path));
    }
    out.sort();
    Ok(out)
}

fn mismatch(a: &Path, b: &Path, what: impl std::fmt::Display) -> Error {
    Error::file(a, format!("{what} (against {})", b.display()))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Meta {
    fps: f64,
}

/// Locations of every bundle channel. Optional channels are `None` when
/// absent.
#[derive(Debug, Clone, PartialEq)]
pub struct BundlePaths {
    pub intrinsics: PathBuf,
    pub poses: PathBuf,
    pub frames: PathBuf,
    pub depths: PathBuf,
    pub flows: Option<PathBuf>,
    pub camera_flows: Option<PathBuf>,
    pub masks: Option<PathBuf>,
    pub poses_smooth: Option<PathBuf>,
    pub gyro: Option<PathBuf>,
    pub points: Option<PathBuf>,
    pub meta: Option<PathBuf>,
}

impl BundlePaths {
    /// The standard layout under `dir`, keeping optional entries that exist.
    pub fn in_dir(dir: &Path) -> Self {
        let opt = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        BundlePaths {
            intrinsics: dir.join("intrinsics.json"),
            poses: dir.join("poses.json"),
            frames: dir.join("frames"),
            depths: dir.join("depths"),
            flows: opt("flows"),
            camera_flows: opt("camera_flows"),
            masks: opt("masks"),
            poses_smooth: opt("poses_smooth.json"),
            gyro: opt("gyro.jsonl"),
            points: opt("points.json"),
            meta: opt("meta.json"),
        }
    }
}

/// Loads a bundle written in the layout above, validating every
/// cross-file relation before returning.
pub fn load_bundle(dir: &Path) -> Result<VideoBundle> {
    load_bundle_from(&BundlePaths::in_dir(dir))
}

pub fn load_bundle_from(paths: &BundlePaths) -> Result<VideoBundle> {
    let k_path = &paths.intrinsics;
    let k = read_intrinsics(k_path)?;
    let frames_dir = &paths.frames;
    let frame_paths = numbered_files(frames_dir, "png")?;
    let depth_paths = numbered_files(&paths.depths, "pfm")?;
    let pose_path = &paths.poses;
    if frame_paths.is_empty() {
        return Err(Error::file(frames_dir, "no frames"));
    }
    let n = frame_paths.len();
    if depth_paths.len() != n {
        return Err(mismatch(&paths.depths, frames_dir, format!("{} depth maps for {n} frames", depth_paths.len())));
    }
    let poses = read_poses(pose_path)?;
    if poses.len() != n {
        return Err(mismatch(pose_path, frames_dir, format!("{} poses for {n} frames", poses.len())));
    }
    let frames = frame_paths.par_iter().map(|p| read_png(p)).collect::<Result<Vec<_>>>()?;
    let depths = depth_paths.par_iter().map(|p| read_depth(p)).collect::<Result<Vec<_>>>()?;
    for (i, f) in frames.iter().enumerate() {
        if f.dims() != k.dims() {
            return Err(mismatch(&frame_paths[i], k_path, format!("frame is {:?}, intrinsics say {:?}", f.dims(), k.dims())));
        }
        if depths[i].dims() != f.dims() {
            return Err(mismatch(&depth_paths[i], &frame_paths[i], format!("depth is {:?}, frame is {:?}", depths[i].dims(), f.dims())));
        }
    }
    let load_flows = |dir: &Option<PathBuf>| -> Result<BTreeMap<(usize, usize), FlowField>> {
        let Some(d) = dir else {
            return Ok(BTreeMap::new());
        };
        let files = pair_files(d)?;
        for ((a, b), p) in &files {
            if *a >= n || *b >= n {
                return Err(mismatch(p, frames_dir, format!("flow {a}->{b} but only {n} frames")));
            }
        }
        files
            .par_iter()
            .map(|(key, p)| {
                let f = read_flo(p, None)?;
                if f.dims() != k.dims() {
                    return Err(mismatch(p, &frame_paths[key.0], format!("flow is {:?}, frame is {:?}", f.dims(), k.dims())));
                }
                Ok((*key, f))
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().collect())
    };
    let flows = load_flows(&paths.flows)?;
    let camera_flows = load_flows(&paths.camera_flows)?;
    let dynamic_masks = match &paths.masks {
        Some(mask_dir) => {
            let mpaths = numbered_files(mask_dir, "png")?;
            if mpaths.len() != n {
                return Err(mismatch(mask_dir, frames_dir, format!("{} masks for {n} frames", mpaths.len())));
            }
            let masks = mpaths.par_iter().map(|p| read_mask(p)).collect::<Result<Vec<_>>>()?;
            for (i, m) in masks.iter().enumerate() {
                if m.dims() != k.dims() {
                    return Err(mismatch(&mpaths[i], &frame_paths[i], "mask and frame sizes differ"));
                }
            }
            Some(masks)
        }
        None => None,
    };
    let poses_smooth = match &paths.poses_smooth {
        Some(sp) => {
            let p = read_poses(sp)?;
            if p.len() != n {
                return Err(mismatch(sp, pose_path, format!("{} smooth poses for {n} poses", p.len())));
            }
            Some(p)
        }
        None => None,
    };
    let gyro = paths.gyro.as_deref().map(read_gyro).transpose()?;
    let points = paths.points.as_deref().map(read_points).transpose()?;
    if let (Some(p), Some(pp)) = (&points, &paths.points) {
        if let Some(&f) = p.visibility.keys().find(|&&f| f >= n) {
            return Err(mismatch(pp, pose_path, format!("visibility for frame {f} but only {n} poses")));
        }
    }
    let fps = match &paths.meta {
        Some(m) => read_json::<Meta>(m)?.fps,
        None => 30.0,
    };
    let bundle = VideoBundle {
        intrinsics: k,
        frames,
        depths,
        flows,
        camera_flows,
        dynamic_masks,
        poses,
        poses_smooth,
        gyro,
        points,
        fill_masks: None,
        fps,
    };
    in_file(frames_dir, bundle.validate())?;
    Ok(bundle)
}

/// Writes every present channel of `bundle` into `dir`.
pub fn write_bundle(dir: &Path, bundle: &VideoBundle) -> Result<()> {
    bundle.validate()?;
    write_json(&dir.join("intrinsics.json"), &bundle.intrinsics)?;
    write_poses(&dir.join("poses.json"), &bundle.poses)?;
    write_json(&dir.join("meta.json"), &Meta { fps: bundle.fps })?;
    bundle
        .frames
        .par_iter()
        .enumerate()
        .try_for_each(|(i, f)| write_png(&dir.join("frames").join(frame_name(i, "png")), f))?;
    bundle
        .depths
        .par_iter()
        .enumerate()
        .try_for_each(|(i, d)| write_depth(&dir.join("depths").join(frame_name(i, "pfm")), d))?;
    for (sub, flows) in [("flows", &bundle.flows), ("camera_flows", &bundle.camera_flows)] {
        flows
            .par_iter()
            .try_for_each(|(&(a, b), f)| write_flo(&dir.join(sub).join(pair_name(a, b)), f))?;
    }
    if let Some(masks) = &bundle.dynamic_masks {
        masks
            .par_iter()
            .enumerate()
            .try_for_each(|(i, m)| write_mask(&dir.join("masks").join(frame_name(i, "png")), m))?;
    }
    if let Some(p) = &bundle.poses_smooth {
        write_poses(&dir.join("poses_smooth.json"), p)?;
    }
    if let Some(g) = &bundle.gyro {
        write_gyro(&dir.join("gyro.jsonl"), g)?;
    }
    if let Some(p) = &bundle.points {
        write_points(&dir.join("points.json"), p)?;
    }
    Ok(())
}
