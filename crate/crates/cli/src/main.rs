//! `splatstab` command-line tool.
//!
//! Exit codes: 0 success, 1 input error, 2 numerical failure.

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use splatstab::io::{self, BundlePaths};
use splatstab::metrics::{self, Correspondences, FrameMatches, MetricReport, TrackSet};
use splatstab::optimize::{stabilize, LearningRates, OptimizerKind, PairMode};
use splatstab::rolling_shutter::{rs_remove_frame, OisLog, RowTiming};
use splatstab::scale_align::{align_sequence, apply_global_scale, RansacConfig};
use splatstab::splat::{render_primitives, GaussianPrimitive, SceneInit};
use splatstab::synth::{generate, rs_warp, RotationRamp};
use splatstab::trajectory::smooth_trajectory;
use splatstab::{LossBreakdown, OptimConfig, SceneSpec, SmoothingConfig, Trajectory};

#[derive(Parser, Debug)]
#[command(name = "splatstab", version, about = "Full-frame video stabilization with per-frame Gaussian splats")]
struct Cli {
    /// Seed for view sampling, RANSAC and synthetic scenes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// File of key=value lines; each key is a flag name and overrides it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Render a synthetic bundle with ground truth.
    Synth(SynthArgs),
    /// Undo rolling-shutter and OIS motion using gyro logs.
    RsRemove(RsArgs),
    /// Estimate the metric scale of a sparse reconstruction from depth maps.
    AlignScale(AlignArgs),
    /// Gaussian-smooth a pose file.
    Smooth(SmoothArgs),
    /// Optimize per-frame scenes and render them along the smoothed path.
    Stabilize(StabilizeArgs),
    /// Render a scene dump at a pose.
    Render(RenderArgs),
    /// Evaluate stabilization metrics.
    Metrics(MetricsArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scene description (JSON); defaults to a 64x64 room with a moving cylinder.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write rolling-shutter corrupted frames with this readout time.
    #[arg(long)]
    rs_readout_ms: Option<f64>,
    /// Yaw accumulated over one readout of the corrupted frames.
    #[arg(long, default_value_t = 2.0)]
    rs_yaw_deg: f64,
}

#[derive(Args, Debug)]
struct RsArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    gyro: PathBuf,
    #[arg(long)]
    ois: Option<PathBuf>,
    #[arg(long)]
    intrinsics: PathBuf,
    /// Rows per homography block.
    #[arg(long, default_value_t = 32)]
    block: usize,
    #[arg(long)]
    readout_ms: f64,
    /// Frame `i` starts exposing at `i / fps` seconds on the gyro clock.
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[arg(long)]
    depths: PathBuf,
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long)]
    iters: Option<usize>,
    /// Inlier threshold in log-depth.
    #[arg(long)]
    tau: Option<f64>,
    /// Write rescaled poses.json and points.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SmoothArgs {
    #[arg(long)]
    poses: PathBuf,
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
    /// Odd window length or "auto" (2*ceil(3*sigma)+1).
    #[arg(long, default_value = "auto")]
    window: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PairModeArg {
    Normalized,
    Raw,
}

#[derive(Args, Debug)]
struct StabilizeArgs {
    /// Bundle directory in the standard layout; individual flags override
    /// its entries.
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    depths: Option<PathBuf>,
    #[arg(long)]
    flows: Option<PathBuf>,
    #[arg(long)]
    camera_flows: Option<PathBuf>,
    #[arg(long)]
    poses: Option<PathBuf>,
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Dynamic-object masks (255 = dynamic).
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
    /// Smoothing window: odd length or "auto".
    #[arg(long, default_value = "auto")]
    window: String,
    #[arg(long, default_value_t = 96)]
    pad: usize,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    /// Comma-separated dilation per epoch (default 0,2,4,8,...).
    #[arg(long)]
    dilation: Option<String>,
    #[arg(long, default_value_t = 30)]
    steps_per_epoch: usize,
    #[arg(long, default_value_t = 4)]
    views_per_step: usize,
    /// Neighbours within this many frames supervise a scene.
    #[arg(long, default_value_t = 10)]
    view_window: usize,
    #[arg(long, default_value_t = 5)]
    reg_window: usize,
    #[arg(long, default_value_t = 0.2)]
    lambda_ssim: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda_consistent: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda_scale: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda_offset: f64,
    #[arg(long, default_value_t = LearningRates::default().position)]
    lr_position: f64,
    #[arg(long, default_value_t = LearningRates::default().scale)]
    lr_scale: f64,
    #[arg(long, default_value_t = LearningRates::default().rotation)]
    lr_rotation: f64,
    #[arg(long, default_value_t = LearningRates::default().opacity)]
    lr_opacity: f64,
    #[arg(long, default_value_t = LearningRates::default().color)]
    lr_color: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,
    #[arg(long, value_enum, default_value_t = PairModeArg::Normalized)]
    pair_mode: PairModeArg,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    compensate_dynamics: bool,
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    offset_static_only: bool,
    /// Initial scale in source-pixel footprints.
    #[arg(long, default_value_t = SceneInit::default().pixel_footprint)]
    init_footprint: f64,
    #[arg(long, default_value_t = SceneInit::default().opacity)]
    init_opacity: f64,
    #[arg(long, default_value_t = SceneInit::default().layers)]
    layers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// GAVS scene dump.
    #[arg(long)]
    scene: PathBuf,
    /// Pose file; the record for `--frame` is used.
    #[arg(long)]
    pose: PathBuf,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the expected depth as PFM.
    #[arg(long)]
    depth_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Cr,
    D,
    S,
    Gcs,
    Gcd,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long, value_enum)]
    mode: Vec<Mode>,
    /// Validity masks (cr) or dynamic masks (gcd).
    #[arg(long)]
    masks: Option<PathBuf>,
    /// JSON list of {src: [[u,v],...], dst: [[u,v],...]} per frame (d).
    #[arg(long)]
    matches: Option<PathBuf>,
    /// JSON track file (s).
    #[arg(long)]
    tracks: Option<PathBuf>,
    #[arg(long)]
    poses: Option<PathBuf>,
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// JSON {points: [[x,y,z],...], observations: [{frame, point, uv}]} (gcs).
    #[arg(long)]
    correspondences: Option<PathBuf>,
    /// Stabilized frames (gcd).
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Directory of %06d.gavs scene dumps (gcd).
    #[arg(long)]
    scenes: Option<PathBuf>,
    #[arg(long, default_value_t = metrics::HOLDOUT_INTERVAL)]
    interval: usize,
}

fn parse_cli() -> Result<Cli, clap::Error> {
    let args: Vec<OsString> = std::env::args_os().collect();
    let command = || Cli::command().args_override_self(true).mut_subcommands(|s| s.args_override_self(true));
    let first = Cli::from_arg_matches(&command().try_get_matches_from(&args)?)?;
    let Some(path) = &first.config else {
        return Ok(first);
    };
    let sub = command()
        .try_get_matches_from(&args)?
        .subcommand_name()
        .map(str::to_string)
        .unwrap_or_default();
    let injected = config::read(path)
        .and_then(|entries| config::inject(&command(), &sub, &args, &entries))
        .map_err(|e| command().error(clap::error::ErrorKind::ValueValidation, format!("{e:#}")))?;
    Cli::from_arg_matches(&command().try_get_matches_from(&injected)?)
}

fn main() -> ExitCode {
    let cli = match parse_cli() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .chain()
                .any(|c| c.downcast_ref::<splatstab::Error>().is_some_and(|e| e.is_numerical()));
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    let seed = cli.seed;
    match cli.command {
        Cmd::Synth(a) => synth(a, seed),
        Cmd::RsRemove(a) => rs_remove(a),
        Cmd::AlignScale(a) => align_scale(a, seed.unwrap_or(0)),
        Cmd::Smooth(a) => smooth(a),
        Cmd::Stabilize(a) => stabilize_cmd(a, seed.unwrap_or(0)),
        Cmd::Render(a) => render_cmd(a),
        Cmd::Metrics(a) => metrics_cmd(a),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn synth(a: SynthArgs, seed: Option<u64>) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => io::read_json::<SceneSpec>(p)?,
        None => SceneSpec::room(64, 64, 24, true, 0),
    };
    if let Some(s) = seed {
        spec.seed = s;
        spec.trajectory.seed = s;
    }
    spec.validate()?;
    let bundle = generate(&spec)?;
    io::write_bundle(&a.out, &bundle)?;
    io::write_json(&a.out.join("spec.json"), &spec)?;
    if let Some(ms) = a.rs_readout_ms {
        let warped = rs_warp(&spec, &bundle, ms * 1e-3, &RotationRamp::yaw(a.rs_yaw_deg))?;
        let dir = a.out.join("rs");
        for (i, f) in warped.frames.iter().enumerate() {
            io::write_png(&dir.join("frames").join(io::frame_name(i, "png")), f)?;
        }
        io::write_gyro(&dir.join("gyro.jsonl"), &warped.gyro)?;
        io::write_ois(&dir.join("ois.jsonl"), &warped.ois)?;
    }
    eprintln!("wrote {} frames to {}", bundle.len(), a.out.display());
    Ok(())
}

fn rs_remove(a: RsArgs) -> Result<()> {
    let k = io::read_intrinsics(&a.intrinsics)?;
    let gyro = io::read_gyro(&a.gyro)?;
    let ois = match &a.ois {
        Some(p) => io::read_ois(p)?,
        None => OisLog::zero(),
    };
    if !(a.fps > 0.0) || !(a.readout_ms > 0.0) {
        bail!("fps and readout must be positive");
    }
    let paths = io::numbered_files(&a.frames, "png")?;
    let frames = paths.iter().map(|p| io::read_png(p)).collect::<splatstab::Result<Vec<_>>>()?;
    for (i, f) in frames.iter().enumerate() {
        if f.dims() != k.dims() {
            bail!("{}: frame size {:?} does not match {} ({:?})", paths[i].display(), f.dims(), a.intrinsics.display(), k.dims());
        }
    }
    for (i, f) in frames.iter().enumerate() {
        let timing = RowTiming { frame_start: i as f64 / a.fps, readout: a.readout_ms * 1e-3 };
        let c = rs_remove_frame(f, &k, &gyro, &ois, &timing, a.block)?;
        io::write_png(&a.out.join("frames").join(io::frame_name(i, "png")), &c.image)?;
        io::write_mask(&a.out.join("valid").join(io::frame_name(i, "png")), &c.mask)?;
    }
    eprintln!("corrected {} frames", frames.len());
    Ok(())
}

#[derive(Serialize)]
struct FrameScale {
    frame: usize,
    alpha: f64,
    inliers: usize,
    samples: usize,
}

#[derive(Serialize)]
struct AlignReport {
    per_frame: Vec<Option<FrameScale>>,
    global: f64,
}

fn align_scale(a: AlignArgs, seed: u64) -> Result<()> {
    let k = io::read_intrinsics(&a.intrinsics)?;
    let poses = io::read_poses(&a.poses)?;
    let points = io::read_points(&a.points)?;
    let paths = io::numbered_files(&a.depths, "pfm")?;
    if paths.len() != poses.len() {
        bail!("{} has {} depth maps but {} has {} poses", a.depths.display(), paths.len(), a.poses.display(), poses.len());
    }
    let depths = paths.iter().map(|p| io::read_depth(p)).collect::<splatstab::Result<Vec<_>>>()?;
    let mut cfg = RansacConfig { seed, ..RansacConfig::default() };
    if let Some(i) = a.iters {
        cfg.iters = i;
    }
    if let Some(t) = a.tau {
        cfg.tau = t;
    }
    let al = align_sequence(&depths, &poses, &k, &points, &cfg)?;
    let report = AlignReport {
        per_frame: al
            .per_frame
            .iter()
            .enumerate()
            .map(|(frame, e)| {
                e.as_ref().map(|e| FrameScale { frame, alpha: e.scale, inliers: e.inlier_count, samples: e.sample_count })
            })
            .collect(),
        global: al.global,
    };
    print_json(&report)?;
    if let Some(out) = &a.out {
        let (p, s) = apply_global_scale(&poses, &points, al.global);
        io::write_poses(&out.join("poses.json"), &p)?;
        io::write_points(&out.join("points.json"), &s)?;
    }
    Ok(())
}

fn smoothing_config(sigma: f64, window: &str) -> Result<SmoothingConfig> {
    Ok(if window == "auto" {
        SmoothingConfig::with_auto_window(sigma)?
    } else {
        let w: usize = window.parse().with_context(|| format!("window must be an odd integer or \"auto\", got {window:?}"))?;
        SmoothingConfig::new(sigma, w)?
    })
}

fn smooth(a: SmoothArgs) -> Result<()> {
    let cfg = smoothing_config(a.sigma, &a.window)?;
    let poses = io::read_poses(&a.poses)?;
    let smooth = smooth_trajectory(&Trajectory::new(poses)?, &cfg)?;
    io::write_poses(&a.out, smooth.poses())?;
    Ok(())
}

fn default_dilation(epochs: usize) -> Vec<usize> {
    (0..epochs).map(|e| if e == 0 { 0 } else { 1 << e }).collect()
}

fn optim_config(a: &StabilizeArgs, seed: u64) -> Result<OptimConfig> {
    let dilation_schedule = match &a.dilation {
        Some(s) => s
            .split(',')
            .map(|v| v.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("bad dilation list {s:?}"))?,
        None => default_dilation(a.epochs),
    };
    let cfg = OptimConfig {
        epochs: a.epochs,
        views_per_step: a.views_per_step,
        window: a.view_window,
        reg_window: a.reg_window,
        dilation_schedule,
        steps_per_epoch: a.steps_per_epoch,
        lambda_ssim: a.lambda_ssim,
        lambda_consistent: a.lambda_consistent,
        lambda_scale: a.lambda_scale,
        lambda_offset: a.lambda_offset,
        learning_rates: LearningRates {
            position: a.lr_position,
            scale: a.lr_scale,
            rotation: a.lr_rotation,
            opacity: a.lr_opacity,
            color: a.lr_color,
        },
        optimizer: match a.optimizer {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        },
        pair_mode: match a.pair_mode {
            PairModeArg::Normalized => PairMode::NormalizedOffset,
            PairModeArg::Raw => PairMode::RawMean,
        },
        compensate_dynamics: a.compensate_dynamics,
        offset_static_only: a.offset_static_only,
        scene_init: SceneInit {
            pixel_footprint: a.init_footprint,
            opacity: a.init_opacity,
            layers: a.layers,
            ..SceneInit::default()
        },
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn bundle_paths(a: &StabilizeArgs) -> Result<BundlePaths> {
    let base = a.bundle.as_deref().map(BundlePaths::in_dir);
    let pick = |flag: &Option<PathBuf>, from: Option<PathBuf>, name: &str| -> Result<PathBuf> {
        flag.clone().or(from).with_context(|| format!("--{name} is required without --bundle"))
    };
    let opt = |flag: &Option<PathBuf>, from: Option<PathBuf>| flag.clone().or(from);
    Ok(BundlePaths {
        intrinsics: pick(&a.intrinsics, base.as_ref().map(|b| b.intrinsics.clone()), "intrinsics")?,
        poses: pick(&a.poses, base.as_ref().map(|b| b.poses.clone()), "poses")?,
        frames: pick(&a.frames, base.as_ref().map(|b| b.frames.clone()), "frames")?,
        depths: pick(&a.depths, base.as_ref().map(|b| b.depths.clone()), "depths")?,
        flows: Some(pick(&a.flows, base.as_ref().and_then(|b| b.flows.clone()), "flows")?),
        camera_flows: opt(&a.camera_flows, base.as_ref().and_then(|b| b.camera_flows.clone())),
        masks: opt(&a.masks, base.as_ref().and_then(|b| b.masks.clone())),
        poses_smooth: None,
        gyro: None,
        points: None,
        meta: base.as_ref().and_then(|b| b.meta.clone()),
    })
}

#[derive(Serialize)]
struct LossRow<'a> {
    frame: usize,
    step: usize,
    #[serde(flatten)]
    loss: &'a LossBreakdown,
}

fn stabilize_cmd(a: StabilizeArgs, seed: u64) -> Result<()> {
    let smoothing = smoothing_config(a.sigma, &a.window)?;
    let cfg = optim_config(&a, seed)?;
    let bundle = io::load_bundle_from(&bundle_paths(&a)?)?;
    let out = stabilize(&bundle, &smoothing, a.pad, &cfg)?;
    let mut lines = String::new();
    for (frame, hist) in out.history.iter().enumerate() {
        for (step, loss) in hist.iter().enumerate() {
            lines += &serde_json::to_string(&LossRow { frame, step, loss })?;
            lines.push('\n');
        }
    }
    print!("{lines}");
    std::fs::create_dir_all(&a.out).with_context(|| format!("{}: cannot create", a.out.display()))?;
    std::fs::write(a.out.join("losses.jsonl"), &lines)?;
    for (i, f) in out.frames.iter().enumerate() {
        io::write_png(&a.out.join("frames").join(io::frame_name(i, "png")), f)?;
        io::write_mask(&a.out.join("coverage").join(io::frame_name(i, "png")), &out.coverage[i])?;
        io::write_scene(&a.out.join("scenes").join(io::frame_name(i, "gavs")), &out.scenes[i].primitives)?;
    }
    io::write_poses(&a.out.join("poses.json"), &out.poses)?;
    io::write_json(&a.out.join("intrinsics.json"), &bundle.intrinsics)?;
    let cr = metrics::cropping_ratio(&out.coverage)?;
    eprintln!("stabilized {} frames, cropping ratio {cr:.4}", out.frames.len());
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let prims = io::read_scene(&a.scene)?;
    let poses = io::read_poses(&a.pose)?;
    let Some(pose) = poses.get(a.frame) else {
        bail!("{} has no frame {}", a.pose.display(), a.frame);
    };
    let k = io::read_intrinsics(&a.intrinsics)?;
    let r = render_primitives(&prims, &k, pose);
    io::write_png(&a.out, &r.color)?;
    if let Some(p) = &a.depth_out {
        io::write_depth(p, &splatstab::DepthMap::from_values(r.depth))?;
    }
    Ok(())
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str, mode: &str) -> Result<&'a Path> {
    p.as_deref().with_context(|| format!("--mode {mode} needs --{flag}"))
}

fn read_masks(dir: &Path) -> Result<Vec<splatstab::Mask>> {
    let paths = io::numbered_files(dir, "png")?;
    Ok(paths.iter().map(|p| io::read_mask(p)).collect::<splatstab::Result<Vec<_>>>()?)
}

fn metrics_cmd(a: MetricsArgs) -> Result<()> {
    if a.mode.is_empty() {
        bail!("--mode is required (cr, d, s, gcs or gcd)");
    }
    let mut report = MetricReport::default();
    for mode in &a.mode {
        match mode {
            Mode::Cr => {
                let masks = read_masks(need(&a.masks, "masks", "cr")?)?;
                report.cropping_ratio = Some(metrics::cropping_ratio(&masks)?);
            }
            Mode::D => {
                let m: Vec<FrameMatches> = io::read_json(need(&a.matches, "matches", "d")?)?;
                let d = metrics::distortion(&m)?;
                for f in &d.skipped {
                    eprintln!("distortion: frame {f} skipped (degenerate fit)");
                }
                report.distortion = Some(d.value);
                report.distortion_per_frame = Some(d.per_frame);
            }
            Mode::S => {
                report.stability = Some(match (&a.tracks, &a.poses) {
                    (Some(t), _) => {
                        let tracks: TrackSet = io::read_json(t)?;
                        tracks.validate()?;
                        metrics::stability(&tracks)?
                    }
                    (None, Some(p)) => metrics::trajectory_stability(&io::read_poses(p)?)?,
                    (None, None) => bail!("--mode s needs --tracks or --poses"),
                });
            }
            Mode::Gcs => {
                let c: Correspondences = io::read_json(need(&a.correspondences, "correspondences", "gcs")?)?;
                let k = io::read_intrinsics(need(&a.intrinsics, "intrinsics", "gcs")?)?;
                let poses = io::read_poses(need(&a.poses, "poses", "gcs")?)?;
                report.gc_sparse = Some(metrics::gc_sparse(&c, &k, &poses)?);
            }
            Mode::Gcd => {
                let k = io::read_intrinsics(need(&a.intrinsics, "intrinsics", "gcd")?)?;
                let poses = io::read_poses(need(&a.poses, "poses", "gcd")?)?;
                let frame_paths = io::numbered_files(need(&a.frames, "frames", "gcd")?, "png")?;
                let frames = frame_paths.iter().map(|p| io::read_png(p)).collect::<splatstab::Result<Vec<_>>>()?;
                let scene_paths = io::numbered_files(need(&a.scenes, "scenes", "gcd")?, "gavs")?;
                let scenes = scene_paths.iter().map(|p| io::read_scene(p)).collect::<splatstab::Result<Vec<_>>>()?;
                let masks = a.masks.as_deref().map(read_masks).transpose()?;
                let refs: Vec<&[GaussianPrimitive]> = scenes.iter().map(Vec::as_slice).collect();
                report.gc_dense = Some(metrics::gc_dense(&frames, &poses, &refs, &k, masks.as_deref(), a.interval)?);
            }
        }
    }
    print_json(&report)
}
