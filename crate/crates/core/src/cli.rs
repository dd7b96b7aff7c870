//! Command-line surface. Every subcommand reads an optional TOML run
//! config, applies flag overrides on top, writes its outputs into one
//! directory and records a `manifest.json` there.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for data errors.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::geometry::{warp, CameraRig, Photometric};
use crate::io_data::config::{Manifest, RunConfig};
use crate::io_data::png_io::{
    load_depth_png, load_image_png, save_depth_png, save_gray_png, save_image_png,
};
use crate::io_data::resample::{resample, CenterBounds, ResampleMode, DEFAULT_KEEP_RATE};
use crate::io_data::scene::{render_scene, FrameTime};
use crate::metrics::{
    calibrate_fixed_scale, evaluate_with_protocol, mean_report, MetricReport, ProtocolKind, CSV_HEADER,
};
use crate::pdc::{compose_full, ComposeInputs, GeneratorSpec};
use crate::propagation::build_schedule;
use crate::raster::{valid_bounds, DepthMap, Grid};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

#[derive(Debug, Parser)]
#[command(name = "fovprop", version, about = "Propagate small-FoV LiDAR depth to the full camera frame")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// Run configuration file (TOML). Built-in defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed for every random draw.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; created when missing.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Center,
    Sparse,
    Random,
    Bottom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    #[value(name = "M")]
    M,
    #[value(name = "F")]
    F,
    #[value(name = "P")]
    P,
}

impl From<ProtocolArg> for ProtocolKind {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::M => ProtocolKind::Median,
            ProtocolArg::F => ProtocolKind::Fixed,
            ProtocolArg::P => ProtocolKind::Partial,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic scene at t-1, t, t+1: RGB frames, depth PNGs and scene.json.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Image width in pixels.
        #[arg(long)]
        width: Option<usize>,
        /// Image height in pixels.
        #[arg(long)]
        height: Option<usize>,
    },
    /// Cut a simulated partial depth map out of a ground-truth depth PNG.
    Resample {
        #[command(flatten)]
        common: CommonArgs,
        /// Ground-truth depth PNG.
        #[arg(long, value_name = "FILE")]
        ground_truth: Option<PathBuf>,
        /// Resampling mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Share of the image width kept.
        #[arg(long)]
        fraction_w: Option<f64>,
        /// Share of the image height kept.
        #[arg(long)]
        fraction_h: Option<f64>,
        /// Probability of keeping a pixel in sparse mode.
        #[arg(long)]
        keep_rate: Option<f64>,
    },
    /// Propagate a partial depth map to the full frame.
    Propagate {
        #[command(flatten)]
        common: CommonArgs,
        /// RGB image (8-bit PNG).
        #[arg(long, value_name = "FILE")]
        image: Option<PathBuf>,
        /// Partial depth PNG.
        #[arg(long, value_name = "FILE")]
        partial: Option<PathBuf>,
        /// Ground-truth depth PNG, needed by the noisy-oracle generator.
        #[arg(long, value_name = "FILE")]
        ground_truth: Option<PathBuf>,
        /// Coarse full-frame depth PNG rescaled at every stage.
        #[arg(long, value_name = "FILE")]
        coarse: Option<PathBuf>,
        /// Number of propagation stages.
        #[arg(long)]
        stages: Option<usize>,
        /// Generator name (noisy-oracle, guided-interpolator, constant-fill).
        #[arg(long)]
        generator: Option<String>,
        /// Candidates per stage.
        #[arg(long)]
        samples: Option<usize>,
        /// Weight of the partial-depth term in candidate selection.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Score predictions against ground truth; writes metrics.csv and summary.txt.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        dirs: EvalDirs,
        /// Scale protocol: M (median ratio), F (fixed), P (partial depth).
        #[arg(long, value_enum, ignore_case = true)]
        protocol: Option<ProtocolArg>,
        /// Scale used by protocol F.
        #[arg(long)]
        fixed_scale: Option<f64>,
        /// Keep pixels whose ground truth exceeds this depth (meters).
        #[arg(long)]
        min_depth: Option<f64>,
        /// Keep pixels whose ground truth is below this depth (meters).
        #[arg(long)]
        max_depth: Option<f64>,
    },
    /// Warp the neighbouring synthetic frames into frame t with true depth and pose.
    WarpCheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Largest accepted mean absolute intensity error.
        #[arg(long, default_value_t = 1e-2)]
        tolerance: f64,
    },
    /// Mean of per-image median-ratio scales, for protocol F; writes calib.json.
    CalibScale {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        dirs: EvalDirs,
    },
    /// Absolute-error map of a prediction as an 8-bit gray ramp with a legend.
    RenderError {
        #[command(flatten)]
        common: CommonArgs,
        /// Predicted depth PNG.
        #[arg(long, value_name = "FILE")]
        pred: PathBuf,
        /// Ground-truth depth PNG.
        #[arg(long, value_name = "FILE")]
        gt: PathBuf,
        /// Error (meters) mapped to white; defaults to the largest error.
        #[arg(long)]
        max_error: Option<f64>,
    },
}

#[derive(Debug, Args, Default)]
pub struct EvalDirs {
    /// Directory of predicted depth PNGs.
    #[arg(long, value_name = "DIR")]
    pub pred_dir: Option<PathBuf>,
    /// Directory of ground-truth depth PNGs with matching file names.
    #[arg(long, value_name = "DIR")]
    pub gt_dir: Option<PathBuf>,
    /// Directory of partial depth PNGs, needed by protocol P.
    #[arg(long, value_name = "DIR")]
    pub partial_dir: Option<PathBuf>,
}

/// Loaded config plus the overrides applied to it, in flag order.
pub struct Session {
    pub config: RunConfig,
    pub overrides: Vec<String>,
}

impl Session {
    pub fn load(common: &CommonArgs) -> Result<Self> {
        let config = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mut s = Self {
            config,
            overrides: Vec::new(),
        };
        s.set(common.seed, "seed", |c, v| c.seed = v);
        s.set(common.out.clone(), "paths.output", |c, v| c.paths.output = v);
        Ok(s)
    }

    fn set<T: std::fmt::Debug>(&mut self, value: Option<T>, key: &str, apply: impl FnOnce(&mut RunConfig, T)) {
        if let Some(v) = value {
            self.overrides.push(format!("{key}={v:?}"));
            apply(&mut self.config, v);
        }
    }

    fn finish(self) -> Result<Self> {
        self.config.validate()?;
        Ok(self)
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("missing input: set {key} in the config or pass the flag")))
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.paths.output.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes to JSON");
    text.push('\n');
    write_text(dir, name, &text)
}

pub fn cmd_synth(cfg: &RunConfig, overrides: &[String]) -> Result<Manifest> {
    let scene = cfg.scene.build()?;
    let dir = output_dir(cfg)?;
    let mut m = Manifest::new("synth", cfg, overrides);
    for t in FrameTime::ALL {
        let (img, depth) = render_scene(&scene, t)?;
        let (img_name, depth_name) = (format!("image_{}.png", t.name()), format!("depth_{}.png", t.name()));
        save_image_png(&img, dir.join(&img_name))?;
        save_depth_png(&depth, dir.join(&depth_name))?;
        m.outputs.extend([img_name, depth_name]);
    }
    write_json(&dir, "scene.json", &scene)?;
    m.outputs.push("scene.json".into());
    m.write(&dir)?;
    Ok(m)
}

pub fn cmd_resample(cfg: &RunConfig, overrides: &[String]) -> Result<Manifest> {
    let gt = load_depth_png(required(&cfg.paths.ground_truth, "paths.ground_truth")?)?;
    let mode = cfg.resample.clone().with_seed(cfg.seed);
    let p = resample(&gt, &mode)?;
    let dir = output_dir(cfg)?;
    save_depth_png(&p.depth, dir.join("partial.png"))?;
    let mut m = Manifest::new("resample", cfg, overrides);
    m.outputs.push("partial.png".into());
    m.details = json!({ "mode": mode, "rect": p.rect, "valid_pixels": p.depth.valid_count() });
    m.write(&dir)?;
    Ok(m)
}

pub fn cmd_propagate(cfg: &RunConfig, overrides: &[String]) -> Result<Manifest> {
    let image = load_image_png(required(&cfg.paths.image, "paths.image")?)?;
    let partial = load_depth_png(required(&cfg.paths.partial, "paths.partial")?)?;
    let gt = cfg.paths.ground_truth.as_ref().map(load_depth_png).transpose()?;
    let coarse = cfg.paths.coarse.as_ref().map(load_depth_png).transpose()?;
    let generator = match cfg.generator.build(gt.as_ref()) {
        Err(Error::OracleUnavailable) => {
            return Err(Error::Config("generator noisy-oracle needs paths.ground_truth".into()))
        }
        other => other?,
    };
    let rect = valid_bounds(&partial).ok_or(Error::EmptyMask)?;
    let schedule = build_schedule(image.dims(), rect, cfg.propagation.stages)?;
    let out = compose_full(
        ComposeInputs {
            image: &image,
            partial: &partial,
            coarse: coarse.as_ref(),
        },
        &schedule,
        generator.as_ref(),
        &cfg.pdc,
        cfg.seed,
    )?;
    let dir = output_dir(cfg)?;
    save_depth_png(&out.depth, dir.join("depth.png"))?;
    let unc = DepthMap::new(out.uncertainty.width(), out.uncertainty.height(), out.uncertainty.values().to_vec())?;
    save_depth_png(&unc, dir.join("uncertainty.png"))?;
    let mut m = Manifest::new("propagate", cfg, overrides);
    m.outputs = vec!["depth.png".into(), "uncertainty.png".into()];
    m.stages = out.stages;
    m.details = json!({ "schedule": schedule.stages(), "generator": generator.name() });
    m.write(&dir)?;
    Ok(m)
}

fn png_stems(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeSet::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string());
            }
        }
    }
    Ok(out)
}

/// Image ids present in every directory, and the files lacking a partner.
fn pair_ids(dirs: &[&Path]) -> Result<(Vec<String>, Vec<String>)> {
    let sets = dirs.iter().map(|d| png_stems(d)).collect::<Result<Vec<_>>>()?;
    let all: BTreeSet<&String> = sets.iter().flatten().collect();
    let mut paired = Vec::new();
    let mut missing = Vec::new();
    for id in all {
        let absent: Vec<_> = dirs
            .iter()
            .zip(&sets)
            .filter(|(_, s)| !s.contains(id))
            .map(|(d, _)| d.join(format!("{id}.png")).display().to_string())
            .collect();
        if absent.is_empty() {
            paired.push(id.clone());
        } else {
            missing.extend(absent);
        }
    }
    Ok((paired, missing))
}

/// Per-image report rows sorted by image id, with their mean.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub rows: Vec<(String, MetricReport)>,
    pub mean: [f64; 7],
    pub missing: Vec<String>,
}

pub fn cmd_evaluate(cfg: &RunConfig, overrides: &[String]) -> Result<(Manifest, Evaluation)> {
    let proto = cfg.metrics.scale_protocol().map_err(|e| Error::Config(e.to_string()))?;
    let range = cfg.metrics.range_filter();
    let pred_dir = required(&cfg.paths.pred_dir, "paths.pred_dir")?;
    let gt_dir = required(&cfg.paths.gt_dir, "paths.gt_dir")?;
    let partial_dir = match cfg.metrics.protocol {
        ProtocolKind::Partial => Some(required(&cfg.paths.partial_dir, "paths.partial_dir")?),
        _ => None,
    };
    let mut dirs = vec![pred_dir, gt_dir];
    dirs.extend(partial_dir);
    let (ids, missing) = pair_ids(&dirs)?;
    if ids.is_empty() {
        return Err(Error::UnpairedFiles(missing));
    }
    let file = |d: &Path, id: &str| d.join(format!("{id}.png"));
    let rows = ids
        .par_iter()
        .map(|id| {
            let pred = load_depth_png(file(pred_dir, id))?;
            let gt = load_depth_png(file(gt_dir, id))?;
            let partial = partial_dir.map(|d| load_depth_png(file(d, id))).transpose()?;
            let r = evaluate_with_protocol(&pred, &gt, partial.as_ref(), proto, range)?;
            Ok((id.clone(), r))
        })
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<MetricReport> = rows.iter().map(|r| r.1.clone()).collect();
    let mean = mean_report(&reports).expect("at least one row");

    let dir = output_dir(cfg)?;
    let csv_path = dir.join("metrics.csv");
    let to_io = |e: csv::Error| Error::io(&csv_path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(&csv_path).map_err(to_io)?;
    w.write_record(CSV_HEADER).map_err(to_io)?;
    for (id, r) in &rows {
        w.write_record(r.csv_record(id)).map_err(to_io)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let names = ["abs_rel", "sq_rel", "rmse", "rmse_log", "d1", "d2", "d3"];
    let mut summary = String::new();
    let _ = writeln!(summary, "protocol {}", proto.kind());
    let _ = writeln!(summary, "images {}", rows.len());
    for (n, v) in names.iter().zip(mean) {
        let _ = writeln!(summary, "{n} {v}");
    }
    write_text(&dir, "summary.txt", &summary)?;

    let mut m = Manifest::new("evaluate", cfg, overrides);
    m.outputs = vec!["metrics.csv".into(), "summary.txt".into()];
    m.details = json!({
        "images": rows.len(),
        "mean": names.iter().zip(mean).map(|(n, v)| (n.to_string(), json!(v))).collect::<serde_json::Map<_, _>>(),
        "missing": missing,
    });
    m.write(&dir)?;
    Ok((m, Evaluation { rows, mean, missing }))
}

pub fn cmd_calib_scale(cfg: &RunConfig, overrides: &[String]) -> Result<(Manifest, f64)> {
    let pred_dir = required(&cfg.paths.pred_dir, "paths.pred_dir")?;
    let gt_dir = required(&cfg.paths.gt_dir, "paths.gt_dir")?;
    let (ids, missing) = pair_ids(&[pred_dir, gt_dir])?;
    if !missing.is_empty() || ids.is_empty() {
        return Err(Error::UnpairedFiles(missing));
    }
    let pairs = ids
        .iter()
        .map(|id| {
            Ok((
                load_depth_png(pred_dir.join(format!("{id}.png")))?,
                load_depth_png(gt_dir.join(format!("{id}.png")))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = calibrate_fixed_scale(pairs.iter().map(|(p, g)| (p, g)))?;
    let dir = output_dir(cfg)?;
    write_json(&dir, "calib.json", &json!({ "fixed_scale": scale, "images": ids }))?;
    let mut m = Manifest::new("calib-scale", cfg, overrides);
    m.outputs.push("calib.json".into());
    m.details = json!({ "fixed_scale": scale });
    m.write(&dir)?;
    Ok((m, scale))
}

/// Mean absolute intensity error and photometric error of one warp.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WarpCheck {
    pub mean_abs: f64,
    pub photometric: f64,
    pub coverage: f64,
}

pub fn cmd_warp_check(cfg: &RunConfig, overrides: &[String], tolerance: f64) -> Result<(Manifest, Vec<WarpCheck>)> {
    let scene = cfg.scene.build()?;
    let (target, depth) = render_scene(&scene, FrameTime::Current)?;
    let photometric = Photometric::new(cfg.losses.alpha, cfg.losses.photometric_norm)?;
    let dir = output_dir(cfg)?;
    let mut m = Manifest::new("warp-check", cfg, overrides);
    let mut checks = Vec::new();
    for src in [FrameTime::Prev, FrameTime::Next] {
        let (img, _) = render_scene(&scene, src)?;
        let rig = CameraRig::new(scene.intrinsics, scene.relative_pose(FrameTime::Current, src))?;
        let (warped, mask) = warp(&img, &depth, &rig)?;
        let n = mask.count();
        if n == 0 {
            return Err(Error::EmptyMask);
        }
        let mut sum = 0.0;
        for ((a, b), &k) in warped.grid().as_slice().iter().zip(target.grid().as_slice()).zip(mask.as_slice()) {
            if k {
                sum += (0..3).map(|c| (a[c] - b[c]).abs()).sum::<f64>() / 3.0;
            }
        }
        let check = WarpCheck {
            mean_abs: sum / n as f64,
            photometric: photometric.error(&warped, &target, &mask)?,
            coverage: n as f64 / (scene.width * scene.height) as f64,
        };
        let name = format!("warped_{}.png", src.name());
        save_image_png(&warped, dir.join(&name))?;
        m.outputs.push(name);
        checks.push(check);
    }
    write_json(&dir, "warp_check.json", &json!({ "prev": checks[0], "next": checks[1], "tolerance": tolerance }))?;
    m.outputs.push("warp_check.json".into());
    m.details = json!({ "prev": checks[0], "next": checks[1] });
    m.write(&dir)?;
    if let Some(bad) = checks.iter().find(|c| c.mean_abs.is_nan() || c.mean_abs > tolerance) {
        return Err(Error::InvalidValue(format!(
            "warp error {} exceeds tolerance {tolerance}",
            bad.mean_abs
        )));
    }
    Ok((m, checks))
}

/// Gray level of an absolute error on a linear ramp from black (0 m) to
/// white (`max_error`); larger errors saturate.
pub fn error_gray(err: f64, max_error: f64) -> u8 {
    (255.0 * (err / max_error).clamp(0.0, 1.0)).round() as u8
}

/// Absolute-error raster; pixels invalid in either map are black.
pub fn error_map(pred: &DepthMap, gt: &DepthMap, max_error: Option<f64>) -> Result<(Grid<u8>, f64)> {
    gt.ensure_dims(pred.dims())?;
    let err = Grid::from_fn(pred.width(), pred.height(), |x, y| {
        let (p, g) = (pred.get(x, y), gt.get(x, y));
        if p > 0.0 && g > 0.0 {
            (p - g).abs()
        } else {
            0.0
        }
    });
    let max_error = match max_error {
        Some(m) if m.is_finite() && m > 0.0 => m,
        Some(m) => return Err(Error::Config(format!("max error must be > 0, got {m}"))),
        None => {
            let m = err.as_slice().iter().copied().fold(0.0, f64::max);
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    Ok((err.map(|e| error_gray(e, max_error)), max_error))
}

pub fn cmd_render_error(
    cfg: &RunConfig,
    overrides: &[String],
    pred: &Path,
    gt: &Path,
    max_error: Option<f64>,
) -> Result<Manifest> {
    let (p, g) = (load_depth_png(pred)?, load_depth_png(gt)?);
    let (raster, max_error) = error_map(&p, &g, max_error)?;
    let dir = output_dir(cfg)?;
    save_gray_png(&raster, dir.join("error.png"))?;
    let legend = json!({
        "ramp": "linear gray",
        "black_m": 0.0,
        "white_m": max_error,
        "saturates_above_m": max_error,
        "invalid": "black",
    });
    write_json(&dir, "error_legend.json", &legend)?;
    let mut m = Manifest::new("render-error", cfg, overrides);
    m.outputs = vec!["error.png".into(), "error_legend.json".into()];
    m.details = json!({ "pred": pred, "gt": gt, "legend": legend });
    m.write(&dir)?;
    Ok(m)
}

fn apply_mode(s: &mut Session, mode: Option<ModeArg>, fw: Option<f64>, fh: Option<f64>, keep: Option<f64>) {
    if mode.is_none() && fw.is_none() && fh.is_none() && keep.is_none() {
        return;
    }
    let (cur_w, cur_h) = s.config.resample.fractions();
    let (fraction_w, fraction_h) = (fw.unwrap_or(cur_w), fh.unwrap_or(cur_h));
    let (cur_keep, cur_bounds) = match s.config.resample {
        ResampleMode::Sparse { keep_rate, .. } => (keep_rate, CenterBounds::default()),
        ResampleMode::Random { bounds, .. } => (DEFAULT_KEEP_RATE, bounds),
        _ => (DEFAULT_KEEP_RATE, CenterBounds::default()),
    };
    let kind = mode.unwrap_or(match s.config.resample {
        ResampleMode::Center { .. } => ModeArg::Center,
        ResampleMode::Sparse { .. } => ModeArg::Sparse,
        ResampleMode::Random { .. } => ModeArg::Random,
        ResampleMode::Bottom { .. } => ModeArg::Bottom,
    });
    s.config.resample = match kind {
        ModeArg::Center => ResampleMode::Center { fraction_w, fraction_h },
        ModeArg::Bottom => ResampleMode::Bottom { fraction_w, fraction_h },
        ModeArg::Sparse => ResampleMode::Sparse {
            fraction_w,
            fraction_h,
            keep_rate: keep.unwrap_or(cur_keep),
            seed: 0,
        },
        ModeArg::Random => ResampleMode::Random {
            fraction_w,
            fraction_h,
            bounds: cur_bounds,
            seed: 0,
        },
    };
    s.overrides.push(format!("resample={:?}", s.config.resample));
}

/// Run one parsed invocation.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, width, height } => {
            let mut s = Session::load(&common)?;
            s.set(width, "scene.width", |c, v| c.scene.width = v);
            s.set(height, "scene.height", |c, v| c.scene.height = v);
            let s = s.finish()?;
            cmd_synth(&s.config, &s.overrides)?;
        }
        Command::Resample {
            common,
            ground_truth,
            mode,
            fraction_w,
            fraction_h,
            keep_rate,
        } => {
            let mut s = Session::load(&common)?;
            s.set(ground_truth, "paths.ground_truth", |c, v| c.paths.ground_truth = Some(v));
            apply_mode(&mut s, mode, fraction_w, fraction_h, keep_rate);
            let s = s.finish()?;
            cmd_resample(&s.config, &s.overrides)?;
        }
        Command::Propagate {
            common,
            image,
            partial,
            ground_truth,
            coarse,
            stages,
            generator,
            samples,
            lambda,
        } => {
            let mut s = Session::load(&common)?;
            s.set(image, "paths.image", |c, v| c.paths.image = Some(v));
            s.set(partial, "paths.partial", |c, v| c.paths.partial = Some(v));
            s.set(ground_truth, "paths.ground_truth", |c, v| c.paths.ground_truth = Some(v));
            s.set(coarse, "paths.coarse", |c, v| c.paths.coarse = Some(v));
            s.set(stages, "propagation.stages", |c, v| c.propagation.stages = v);
            s.set(samples, "pdc.samples_per_stage", |c, v| c.pdc.samples_per_stage = v);
            s.set(lambda, "pdc.lambda", |c, v| c.pdc.lambda = v);
            if let Some(name) = generator {
                if name != s.config.generator.name() {
                    s.config.generator = GeneratorSpec::from_name(&name)?;
                }
                s.overrides.push(format!("generator={name:?}"));
            }
            let s = s.finish()?;
            cmd_propagate(&s.config, &s.overrides)?;
        }
        Command::Evaluate {
            common,
            dirs,
            protocol,
            fixed_scale,
            min_depth,
            max_depth,
        } => {
            let mut s = Session::load(&common)?;
            set_dirs(&mut s, dirs);
            s.set(protocol.map(ProtocolKind::from), "metrics.protocol", |c, v| c.metrics.protocol = v);
            s.set(fixed_scale, "metrics.fixed_scale", |c, v| c.metrics.fixed_scale = Some(v));
            s.set(min_depth, "metrics.min_depth", |c, v| c.metrics.min_depth = Some(v));
            s.set(max_depth, "metrics.max_depth", |c, v| c.metrics.max_depth = Some(v));
            let s = s.finish()?;
            let (_, eval) = cmd_evaluate(&s.config, &s.overrides)?;
            if !eval.missing.is_empty() {
                return Err(Error::UnpairedFiles(eval.missing));
            }
        }
        Command::WarpCheck { common, tolerance } => {
            let s = Session::load(&common)?.finish()?;
            cmd_warp_check(&s.config, &s.overrides, tolerance)?;
        }
        Command::CalibScale { common, dirs } => {
            let mut s = Session::load(&common)?;
            set_dirs(&mut s, dirs);
            let s = s.finish()?;
            let (_, scale) = cmd_calib_scale(&s.config, &s.overrides)?;
            println!("{scale}");
        }
        Command::RenderError {
            common,
            pred,
            gt,
            max_error,
        } => {
            let mut s = Session::load(&common)?;
            s.overrides.push(format!("pred={pred:?}"));
            s.overrides.push(format!("gt={gt:?}"));
            s.set(max_error, "max_error", |_, _| ());
            let s = s.finish()?;
            cmd_render_error(&s.config, &s.overrides, &pred, &gt, max_error)?;
        }
    }
    Ok(())
}

fn set_dirs(s: &mut Session, dirs: EvalDirs) {
    s.set(dirs.pred_dir, "paths.pred_dir", |c, v| c.paths.pred_dir = Some(v));
    s.set(dirs.gt_dir, "paths.gt_dir", |c, v| c.paths.gt_dir = Some(v));
    s.set(dirs.partial_dir, "paths.partial_dir", |c, v| c.paths.partial_dir = Some(v));
}
