//! `depthprop`: estimate, evaluate and synthesize depth sequences.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use depthprop_core::io::{self, codec, RunConfig, SequenceManifest};
use depthprop_core::synth::{self, SceneSpec};
use depthprop_core::{aggregate, estimate_depth, sequential_run, Frame, SequenceReport, SequentialRun};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "depthprop",
    version,
    about = "Depth map propagation through independent rigid motions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the depth of frame N+1 from frames N, N+1 and the depth of N.
    Estimate(EstimateArgs),
    /// Sequential estimation from evenly spaced starts, aggregated per offset.
    Evaluate(EvaluateArgs),
    /// Render a synthetic plane scene to images, depth maps and a manifest.
    Synth(SynthArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Manifest JSON, or a TUM sequence directory containing rgb.txt.
    #[arg(long)]
    manifest: PathBuf,
    /// Index of the prior frame; frame + 1 is estimated.
    #[arg(long)]
    frame: usize,
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; falls back to `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Estimates per run [default: from config, 10]
    #[arg(long)]
    horizon: Option<usize>,
    /// Number of runs [default: from config, 100]
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene spec (TOML); the built-in two-plane scene when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synth(a) => run_synth(a),
    };
    if let Err(e) = res {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn output_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| cfg.output_dir.clone())
        .context("no output directory: pass --out or set output_dir in the config")?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct MotionRecord {
    omega: [f64; 3],
    t: [f64; 3],
    inliers: usize,
}

#[derive(Serialize)]
struct EstimateMetadata {
    frame: usize,
    image0: PathBuf,
    image1: PathBuf,
    depth0: PathBuf,
    seed: u64,
    degraded: bool,
    degraded_reason: Option<String>,
    correspondences: usize,
    motions: Vec<MotionRecord>,
    timings_ms: depthprop_core::StageTimings,
    depth_scale: f64,
}

fn estimate(args: EstimateArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let manifest = io::load_sequence(&args.manifest)?;
    if args.frame + 1 >= manifest.len() {
        bail!(
            "--frame {} needs frame {} but the manifest has {} frames (valid: 0..={})",
            args.frame,
            args.frame + 1,
            manifest.len(),
            manifest.len().saturating_sub(2)
        );
    }
    let out = output_dir(args.out, &cfg)?;
    let f0 = manifest.load_frame(args.frame)?;
    let f1 = manifest.load_frame(args.frame + 1)?;
    let est = estimate_depth(
        &f0.image,
        &f1.image,
        &f0.depth,
        &manifest.intrinsics,
        &cfg.depth_params(),
    )?;
    if let Some(reason) = &est.degraded {
        log::warn!("degraded estimate, previous depth passed through: {reason}");
    }

    codec::write_depth_png(&out.join("depth.png"), &est.depth, codec::DEFAULT_DEPTH_SCALE)?;
    codec::write_depth_npy(&out.join("depth.npy"), &est.depth)?;
    codec::write_assignment_png(&out.join("assignment.png"), &est.assignment)?;
    let meta = EstimateMetadata {
        frame: args.frame,
        image0: manifest.frames[args.frame].image.clone(),
        image1: manifest.frames[args.frame + 1].image.clone(),
        depth0: manifest.frames[args.frame].depth.clone(),
        seed: cfg.seed,
        degraded: est.degraded.is_some(),
        degraded_reason: est.degraded.clone(),
        correspondences: est.n_correspondences,
        motions: est
            .motions
            .motions
            .iter()
            .zip(&est.motions.inlier_counts)
            .map(|(m, &n)| MotionRecord {
                omega: m.omega.into(),
                t: m.t.into(),
                inliers: n,
            })
            .collect(),
        timings_ms: est.timings,
        depth_scale: codec::DEFAULT_DEPTH_SCALE,
    };
    write_json(&out.join("metadata.json"), &meta)?;
    println!(
        "frame {} -> {}: {} motions from {} correspondences, {:.1} ms{}",
        args.frame,
        args.frame + 1,
        est.motions.len(),
        est.n_correspondences,
        est.timings.total_ms,
        if est.degraded.is_some() { " (degraded)" } else { "" }
    );
    Ok(())
}

/// `n` start indices spread evenly over `0..feasible`, first and last included.
fn spread_starts(feasible: usize, n: usize) -> Vec<usize> {
    if n <= 1 {
        return vec![0];
    }
    (0..n).map(|i| i * (feasible - 1) / (n - 1)).collect()
}

fn load_window(manifest: &SequenceManifest, start: usize, len: usize) -> Result<Vec<Frame>> {
    (start..start + len).map(|i| Ok(manifest.load_frame(i)?)).collect()
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    if let Some(s) = args.starts {
        cfg.starts = s;
    }
    cfg.validate()?;
    let manifest = io::load_sequence(&args.manifest)?;
    let horizon = cfg.horizon;
    if manifest.len() <= horizon {
        bail!(
            "horizon {horizon} needs at least {} frames but the manifest has {}",
            horizon + 1,
            manifest.len()
        );
    }
    let feasible = manifest.len() - horizon;
    let n_starts = if cfg.starts > feasible {
        log::warn!(
            "--starts {} exceeds the {feasible} feasible starts; using {feasible}",
            cfg.starts
        );
        feasible
    } else {
        cfg.starts
    };
    let out = output_dir(args.out, &cfg)?;
    let starts = spread_starts(feasible, n_starts);
    let params = cfg.depth_params();

    let runs: Vec<SequentialRun> = starts
        .par_iter()
        .enumerate()
        .map(|(i, &start)| {
            let frames = load_window(&manifest, start, horizon + 1)?;
            let mut run = sequential_run(&frames, 0, horizon, &manifest.intrinsics, &params, cfg.max_depth)?;
            run.start = start;
            write_json(&out.join(format!("run_{i:04}.json")), &run)?;
            Ok(run)
        })
        .collect::<Result<_>>()?;

    let mut report: SequenceReport = aggregate(&runs)?;
    report.metadata = serde_json::json!({
        "manifest": args.manifest,
        "starts": starts,
        "seed": cfg.seed,
        "max_depth": cfg.max_depth,
        "frames": manifest.len(),
    });
    write_json(&out.join("report.json"), &report)?;
    print_table(&report);
    Ok(())
}

fn print_table(report: &SequenceReport) {
    println!(
        "{:>6}  {:>8}  {:>8}  {:>8}  {:>8}",
        "offset", "MRE %", "MAE m", "RMSE m", "cover %"
    );
    for r in &report.records {
        println!(
            "{:>6}  {:>8.2}  {:>8.4}  {:>8.4}  {:>8.1}",
            r.offset,
            100.0 * r.mre,
            r.mae,
            r.rmse,
            100.0 * r.coverage
        );
    }
    let s = &report.summary;
    println!(
        "{:>6}  {:>8.2}  {:>8.4}  {:>8.4}  {:>8.1}",
        "mean",
        100.0 * s.mre,
        s.mae,
        s.rmse,
        100.0 * s.coverage
    );
    println!(
        "{} runs, horizon {}, sensor usage reduced by {:.1}%, median {:.1} ms per frame, {} degraded frames",
        s.n_runs,
        s.horizon,
        100.0 * s.sensor_usage_reduction,
        s.median_frame_ms,
        s.degraded_frames
    );
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let spec = match &args.scene {
        Some(p) => synth::load_scene(p)?,
        None => SceneSpec::two_plane(),
    };
    let manifest = synth::write_sequence(&spec, &args.out)?;
    println!(
        "wrote {} frames of {}x{} to {}",
        manifest.len(),
        spec.intrinsics.width,
        spec.intrinsics.height,
        args.out.display()
    );
    Ok(())
}
