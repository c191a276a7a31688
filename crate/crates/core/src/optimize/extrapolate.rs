//! Border extrapolation by propagating content from neighbouring frames.

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;

use crate::bundle::VideoBundle;
use crate::error::Result;
use crate::flow::{camera_flow, FlowField};
use crate::geometry::{project_point, unproject, DepthMap};
use crate::grid::{Grid, Image, Mask};

pub const DEFAULT_PAD: usize = 96;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Source {
    Empty,
    Observed,
    Propagated,
}

fn pad_grid<T: Clone>(g: &Grid<T>, pad: usize, fill: T) -> Grid<T> {
    let (w, h) = g.dims();
    let mut out = Grid::filled(w + 2 * pad, h + 2 * pad, fill);
    for (x, y, v) in g.enumerate() {
        out.set(x + pad, y + pad, v.clone());
    }
    out
}

/// Frame `k` and its depth on the padded canvas, plus which pixels were
/// synthesized.
fn extrapolate_one(bundle: &VideoBundle, k: usize, pad: usize) -> Result<(Image, DepthMap, Mask)> {
    let kin = &bundle.intrinsics;
    let kp = kin.padded(pad);
    let (pw, ph) = kp.dims();
    let mut color = pad_grid(&bundle.frames[k], pad, [0.0; 3]);
    let mut depth = pad_grid(&bundle.depths[k].values, pad, 0.0);
    let mut source = Grid::filled(pw, ph, Source::Empty);
    for (x, y, _) in bundle.frames[k].enumerate() {
        source.set(x + pad, y + pad, Source::Observed);
    }
    let mut empty = pw * ph - kin.width * kin.height;
    let mut order: Vec<usize> = (0..bundle.len()).filter(|&i| i != k).collect();
    order.sort_by_key(|&i| (i.abs_diff(k), i));
    for i in order {
        if empty == 0 {
            break;
        }
        let points = unproject(&bundle.depths[i], kin, &bundle.poses[i])?;
        let dynamic = bundle.dynamic_masks.as_ref().map(|m| &m[i]);
        // Nearest surface from this neighbour per destination pixel.
        let mut best: BTreeMap<usize, (f64, [f64; 3])> = BTreeMap::new();
        for (x, y, p) in points.enumerate() {
            let Some(p) = p else { continue };
            if dynamic.is_some_and(|m| *m.get(x, y)) {
                continue;
            }
            let proj = project_point(p, &kp, &bundle.poses[k]);
            if !proj.valid {
                continue;
            }
            let (u, v) = (proj.pixel.x.round(), proj.pixel.y.round());
            if u < 0.0 || v < 0.0 || u >= pw as f64 || v >= ph as f64 {
                continue;
            }
            let (u, v) = (u as usize, v as usize);
            if *source.get(u, v) != Source::Empty {
                continue;
            }
            let idx = source.index(u, v);
            let c = *bundle.frames[i].get(x, y);
            match best.get(&idx) {
                Some(&(z, _)) if z <= proj.depth => {}
                _ => {
                    best.insert(idx, (proj.depth, c));
                }
            }
        }
        for (idx, (z, c)) in best {
            color.as_mut_slice()[idx] = c;
            depth.as_mut_slice()[idx] = z;
            source.as_mut_slice()[idx] = Source::Propagated;
            empty -= 1;
        }
    }
    // Remaining holes copy the nearest filled pixel (breadth-first).
    let mut queue: VecDeque<(usize, usize)> =
        source.enumerate().filter(|(_, _, s)| **s != Source::Empty).map(|(x, y, _)| (x, y)).collect();
    let mut done = source.map(|s| *s != Source::Empty);
    while let Some((x, y)) = queue.pop_front() {
        let neighbours = [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)];
        for (nx, ny) in neighbours {
            if nx >= pw || ny >= ph || *done.get(nx, ny) {
                continue;
            }
            done.set(nx, ny, true);
            color.set(nx, ny, *color.get(x, y));
            depth.set(nx, ny, *depth.get(x, y));
            queue.push_back((nx, ny));
        }
    }
    let fill = source.map(|s| *s != Source::Observed);
    Ok((color, DepthMap::from_values(depth), fill))
}

/// Grows every frame by `pad` pixels per side. Border pixels take the
/// colour and depth of the temporally nearest neighbour whose static
/// geometry projects there; leftover holes replicate the nearest filled
/// pixel. Flows on the border are the camera flows of the extrapolated
/// depth.
pub fn extrapolate_frames(bundle: &VideoBundle, pad: usize) -> Result<VideoBundle> {
    bundle.validate()?;
    let (w, h) = bundle.intrinsics.dims();
    if pad == 0 {
        let mut out = bundle.clone();
        out.fill_masks.get_or_insert_with(|| vec![Mask::filled(w, h, false); bundle.len()]);
        return Ok(out);
    }
    let kp = bundle.intrinsics.padded(pad);
    let parts: Vec<(Image, DepthMap, Mask)> =
        (0..bundle.len()).into_par_iter().map(|k| extrapolate_one(bundle, k, pad)).collect::<Result<_>>()?;
    let mut frames = Vec::with_capacity(parts.len());
    let mut depths = Vec::with_capacity(parts.len());
    let mut fills = Vec::with_capacity(parts.len());
    for (f, d, m) in parts {
        frames.push(f);
        depths.push(d);
        fills.push(m);
    }
    let flows: BTreeMap<(usize, usize), FlowField> = bundle
        .flows
        .par_iter()
        .map(|(&(a, b), f)| {
            let mut out = camera_flow(&depths[a], &bundle.poses[a], &bundle.poses[b], &kp)?;
            for (x, y, d) in f.disp.enumerate() {
                let (px, py) = (x + pad, y + pad);
                out.disp.set(px, py, *d);
                out.valid.set(px, py, *f.valid.get(x, y));
                out.weight.set(px, py, *f.weight.get(x, y));
            }
            Ok(((a, b), out))
        })
        .collect::<Result<_>>()?;
    let out = VideoBundle {
        intrinsics: kp,
        frames,
        depths,
        flows,
        camera_flows: BTreeMap::new(),
        dynamic_masks: bundle
            .dynamic_masks
            .as_ref()
            .map(|ms| ms.iter().map(|m| pad_grid(m, pad, false)).collect()),
        poses: bundle.poses.clone(),
        poses_smooth: bundle.poses_smooth.clone(),
        gyro: bundle.gyro.clone(),
        points: bundle.points.clone(),
        fill_masks: Some(fills),
        fps: bundle.fps,
    };
    out.validate()?;
    Ok(out)
}
