//! Depth error metrics and the sequential estimation protocol.

use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::depth::{estimate_depth, DepthMap, DepthParams, StageTimings};
use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const DEFAULT_MAX_DEPTH: f64 = 20.0;
pub const DEFAULT_HORIZON: usize = 10;
pub const DEFAULT_STARTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub mre: f64,
    /// Meters.
    pub mae: f64,
    /// Meters.
    pub rmse: f64,
    pub n_evaluated: usize,
    /// Fraction of ground-truth pixels (within the cutoff) that have an estimate.
    pub coverage: f64,
}

/// MRE, MAE and RMSE over pixels valid in both maps whose true depth is at
/// most `max_depth`. Holes in the estimate only lower the coverage.
pub fn compute_metrics(estimate: &DepthMap, truth: &DepthMap, max_depth: f64) -> Result<FrameMetrics> {
    if estimate.dims() != truth.dims() {
        return Err(Error::DimensionMismatch {
            expected: truth.dims(),
            actual: estimate.dims(),
        });
    }
    let (mut rel, mut abs, mut sq) = (0.0f64, 0.0f64, 0.0f64);
    let (mut n, mut n_truth) = (0usize, 0usize);
    for (&z_hat, &z) in estimate.data().iter().zip(truth.data()) {
        if !(z > 0.0 && z <= max_depth) {
            continue;
        }
        n_truth += 1;
        if z_hat > 0.0 {
            let e = (z - z_hat).abs();
            rel += e / z;
            abs += e;
            sq += e * e;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyOverlap);
    }
    let nf = n as f64;
    Ok(FrameMetrics {
        mre: rel / nf,
        mae: abs / nf,
        rmse: (sq / nf).sqrt(),
        n_evaluated: n,
        coverage: n as f64 / n_truth as f64,
    })
}

/// An image with its measured (ground-truth) depth.
#[derive(Debug, Clone)]
pub struct Frame {
    pub image: GrayImage,
    pub depth: DepthMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialRun {
    pub start: usize,
    /// One entry per offset `1..=horizon`.
    pub metrics: Vec<FrameMetrics>,
    pub degraded: Vec<bool>,
    pub motion_counts: Vec<usize>,
    pub timings: Vec<StageTimings>,
}

/// Fraction of frames that need no depth measurement when one measured map
/// seeds `horizon` estimates.
pub fn sensor_usage_reduction(horizon: usize) -> f64 {
    horizon as f64 / (horizon + 1) as f64
}

/// Estimates `horizon` consecutive depth maps starting from the measured depth
/// at `start`, each one seeded by the previous estimate.
pub fn sequential_run(
    frames: &[Frame],
    start: usize,
    horizon: usize,
    k: &Intrinsics,
    params: &DepthParams,
    max_depth: f64,
) -> Result<SequentialRun> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be >= 1"));
    }
    if start + horizon >= frames.len() {
        return Err(Error::invalid(format!(
            "start {start} + horizon {horizon} needs more than {} frames",
            frames.len()
        )));
    }
    if frames[start].depth.valid_count() == 0 {
        return Err(Error::invalid(format!("frame {start} has no valid measured depth")));
    }
    let mut run = SequentialRun {
        start,
        metrics: Vec::with_capacity(horizon),
        degraded: Vec::with_capacity(horizon),
        motion_counts: Vec::with_capacity(horizon),
        timings: Vec::with_capacity(horizon),
    };
    let mut prior = frames[start].depth.clone();
    for offset in 1..=horizon {
        let prev = &frames[start + offset - 1];
        let cur = &frames[start + offset];
        let est = estimate_depth(&prev.image, &cur.image, &prior, k, params)?;
        run.metrics.push(compute_metrics(&est.depth, &cur.depth, max_depth)?);
        run.degraded.push(est.degraded.is_some());
        run.motion_counts.push(est.motions.len());
        run.timings.push(est.timings);
        prior = est.depth;
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetRecord {
    pub offset: usize,
    pub mre: f64,
    pub mae: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub mre: f64,
    pub mae: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub n_runs: usize,
    pub horizon: usize,
    pub sensor_usage_reduction: f64,
    pub degraded_frames: usize,
    pub median_frame_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub records: Vec<OffsetRecord>,
    pub summary: ReportSummary,
    /// Free-form run metadata (parameters, seed, dataset).
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// Per-offset means across runs plus the overall means.
pub fn aggregate(runs: &[SequentialRun]) -> Result<SequenceReport> {
    let first = runs.first().ok_or_else(|| Error::invalid("no runs to aggregate"))?;
    let horizon = first.metrics.len();
    if horizon == 0 || runs.iter().any(|r| r.metrics.len() != horizon) {
        return Err(Error::invalid("runs must share the same non-zero horizon"));
    }
    let n = runs.len() as f64;
    let records: Vec<OffsetRecord> = (0..horizon)
        .map(|o| {
            let mean = |f: fn(&FrameMetrics) -> f64| runs.iter().map(|r| f(&r.metrics[o])).sum::<f64>() / n;
            OffsetRecord {
                offset: o + 1,
                mre: mean(|m| m.mre),
                mae: mean(|m| m.mae),
                rmse: mean(|m| m.rmse),
                coverage: mean(|m| m.coverage),
                n_runs: runs.len(),
            }
        })
        .collect();
    let h = horizon as f64;
    let mut frame_ms: Vec<f64> = runs.iter().flat_map(|r| r.timings.iter().map(|t| t.total_ms)).collect();
    frame_ms.sort_by(f64::total_cmp);
    let median_frame_ms = match frame_ms.len() {
        0 => 0.0,
        l if l % 2 == 1 => frame_ms[l / 2],
        l => 0.5 * (frame_ms[l / 2 - 1] + frame_ms[l / 2]),
    };
    let summary = ReportSummary {
        mre: records.iter().map(|r| r.mre).sum::<f64>() / h,
        mae: records.iter().map(|r| r.mae).sum::<f64>() / h,
        rmse: records.iter().map(|r| r.rmse).sum::<f64>() / h,
        coverage: records.iter().map(|r| r.coverage).sum::<f64>() / h,
        n_runs: runs.len(),
        horizon,
        sensor_usage_reduction: sensor_usage_reduction(horizon),
        degraded_frames: runs.iter().flat_map(|r| &r.degraded).filter(|&&d| d).count(),
        median_frame_ms,
    };
    Ok(SequenceReport {
        records,
        summary,
        metadata: serde_json::Value::Null,
    })
}
