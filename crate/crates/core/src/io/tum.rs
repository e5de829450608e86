//! TUM RGB-D layout: `rgb.txt` and `depth.txt` index files of
//! `timestamp path` lines, 16-bit depth PNGs at 5000 units per meter.

use std::path::Path;

use super::codec::file_dims;
use super::manifest::{FrameEntry, SequenceManifest};
use crate::camera::Intrinsics;
use crate::error::{Error, Result};

pub const TUM_DEPTH_SCALE: f64 = 1.0 / 5000.0;
pub const DEFAULT_MAX_DT: f64 = 0.02;
/// Focal length and principal point of the dataset's default calibration.
pub const TUM_DEFAULT_CALIBRATION: (f64, f64, f64) = (525.0, 319.5, 239.5);

#[derive(Debug, Clone)]
pub struct TumSequence {
    pub manifest: SequenceManifest,
    pub unmatched_rgb: usize,
    pub unmatched_depth: usize,
}

/// Reads a `timestamp path` index, skipping blank and `#` lines.
pub fn parse_index(path: &Path) -> Result<Vec<(f64, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(ts), Some(file)) = (parts.next(), parts.next()) else {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected `timestamp path`".into(),
            });
        };
        let t: f64 = ts.parse().map_err(|_| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("bad timestamp {ts:?}"),
        })?;
        out.push((t, file.to_string()));
    }
    Ok(out)
}

/// One-to-one association of timestamps, closest pairs first, keeping only
/// pairs within `max_dt`. Returns index pairs sorted by the first list.
pub fn associate(a: &[f64], b: &[f64], max_dt: f64) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &ta) in a.iter().enumerate() {
        for (j, &tb) in b.iter().enumerate() {
            let d = (ta - tb).abs();
            if d <= max_dt {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let (mut used_a, mut used_b) = (vec![false; a.len()], vec![false; b.len()]);
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Associates color and depth frames of a TUM sequence directory.
///
/// Intrinsics default to [`TUM_DEFAULT_CALIBRATION`]; overwrite
/// `manifest.intrinsics` for per-sequence calibration.
pub fn load_tum_sequence(root: &Path, max_dt: f64) -> Result<TumSequence> {
    if !(max_dt >= 0.0) {
        return Err(Error::invalid("max_dt must be >= 0"));
    }
    let rgb = parse_index(&root.join("rgb.txt"))?;
    let depth = parse_index(&root.join("depth.txt"))?;
    let ta: Vec<f64> = rgb.iter().map(|r| r.0).collect();
    let tb: Vec<f64> = depth.iter().map(|d| d.0).collect();
    let pairs = associate(&ta, &tb, max_dt);
    if pairs.is_empty() {
        return Err(Error::invalid(format!(
            "{}: no color/depth pairs within {max_dt} s",
            root.display()
        )));
    }
    let frames: Vec<FrameEntry> = pairs
        .iter()
        .map(|&(i, j)| FrameEntry {
            t: rgb[i].0,
            image: root.join(&rgb[i].1),
            depth: root.join(&depth[j].1),
        })
        .collect();
    let (w, h) = file_dims(&frames[0].image)?;
    let (f, xc, yc) = TUM_DEFAULT_CALIBRATION;
    let manifest = SequenceManifest {
        intrinsics: Intrinsics::new(f, xc, yc, w, h)?,
        depth_scale: TUM_DEPTH_SCALE,
        frames,
    };
    manifest.validate()?;
    let out = TumSequence {
        unmatched_rgb: rgb.len() - pairs.len(),
        unmatched_depth: depth.len() - pairs.len(),
        manifest,
    };
    if out.unmatched_rgb + out.unmatched_depth > 0 {
        log::info!(
            "{}: dropped {} color and {} depth frames without a partner",
            root.display(),
            out.unmatched_rgb,
            out.unmatched_depth
        );
    }
    Ok(out)
}
