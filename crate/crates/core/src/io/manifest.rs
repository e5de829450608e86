//! JSON sequence manifests: intrinsics, depth scale and per-frame paths.
//!
//! ```json
//! {"f": 525.0, "xc": 319.5, "yc": 239.5, "width": 640, "height": 480,
//!  "depth_scale": 0.0002,
//!  "frames": [{"t": 0.0, "image": "rgb/0000.png", "depth": "depth/0000.png"}]}
//! ```
//!
//! Relative paths are resolved against the manifest's directory. `fx`/`fy`
//! may replace `f` when they agree to within the anisotropy tolerance.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::codec::{file_dims, read_depth, read_image};
use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::eval::Frame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub t: f64,
    pub image: PathBuf,
    pub depth: PathBuf,
}

/// On-disk manifest layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fy: Option<f64>,
    pub xc: f64,
    pub yc: f64,
    pub width: usize,
    pub height: usize,
    pub depth_scale: f64,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceManifest {
    pub intrinsics: Intrinsics,
    /// Raw depth units to meters.
    pub depth_scale: f64,
    /// Entries in time order with absolute (resolved) paths.
    pub frames: Vec<FrameEntry>,
}

/// 1-based line of the first occurrence of `needle` in `text`.
fn line_of(text: &str, needle: &str) -> usize {
    text.lines().position(|l| l.contains(needle)).map_or(0, |i| i + 1)
}

impl SequenceManifest {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks ordering and that every referenced file exists with the
    /// manifest's dimensions.
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::invalid("manifest lists no frames"));
        }
        if !(self.depth_scale > 0.0 && self.depth_scale.is_finite()) {
            return Err(Error::invalid("depth_scale must be positive"));
        }
        if let Some(w) = self.frames.windows(2).find(|w| !(w[1].t > w[0].t)) {
            return Err(Error::invalid(format!(
                "timestamps must be strictly increasing ({} then {})",
                w[0].t, w[1].t
            )));
        }
        let want = self.intrinsics.dims();
        for e in &self.frames {
            for p in [&e.image, &e.depth] {
                let dims = file_dims(p)?;
                if dims != want {
                    return Err(Error::DimensionMismatch {
                        expected: want,
                        actual: dims,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn load_frame(&self, index: usize) -> Result<Frame> {
        let e = self
            .frames
            .get(index)
            .ok_or_else(|| Error::invalid(format!("frame {index} out of range ({} frames)", self.len())))?;
        Ok(Frame {
            image: read_image(&e.image)?,
            depth: read_depth(&e.depth, self.depth_scale)?,
        })
    }

    /// Decodes every frame, in order.
    pub fn load_frames(&self) -> Result<Vec<Frame>> {
        (0..self.len()).into_par_iter().map(|i| self.load_frame(i)).collect()
    }

    /// The on-disk form with paths made relative to `dir` where possible.
    pub fn to_file(&self, dir: &Path) -> ManifestFile {
        let rel = |p: &PathBuf| p.strip_prefix(dir).map(Path::to_path_buf).unwrap_or_else(|_| p.clone());
        let k = &self.intrinsics;
        ManifestFile {
            f: Some(k.f),
            fx: None,
            fy: None,
            xc: k.xc,
            yc: k.yc,
            width: k.width,
            height: k.height,
            depth_scale: self.depth_scale,
            frames: self
                .frames
                .iter()
                .map(|e| FrameEntry {
                    t: e.t,
                    image: rel(&e.image),
                    depth: rel(&e.depth),
                })
                .collect(),
        }
    }
}

/// Parses and validates a manifest, checking all referenced files.
pub fn load_pair_manifest(path: &Path) -> Result<SequenceManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, message: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file: ManifestFile = serde_json::from_str(&text).map_err(|e| err(e.line(), e.to_string()))?;

    let f = match (file.f, file.fx, file.fy) {
        (Some(f), None, None) => f,
        (None, Some(fx), Some(fy)) => {
            let k = Intrinsics::from_fx_fy(fx, fy, file.xc, file.yc, file.width, file.height)
                .map_err(|e| err(line_of(&text, "\"fx\""), e.to_string()))?;
            k.f
        }
        _ => return Err(err(1, "give either `f` or both `fx` and `fy`".into())),
    };
    let intrinsics =
        Intrinsics::new(f, file.xc, file.yc, file.width, file.height).map_err(|e| err(1, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let manifest = SequenceManifest {
        intrinsics,
        depth_scale: file.depth_scale,
        frames: file
            .frames
            .into_iter()
            .map(|e| FrameEntry {
                t: e.t,
                image: base.join(e.image),
                depth: base.join(e.depth),
            })
            .collect(),
    };
    manifest.validate().map_err(|e| {
        let needle = match &e {
            Error::Image { path, .. } | Error::Io { path, .. } => path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            Error::InvalidInput(m) if m.contains("no frames") => "\"frames\"".into(),
            Error::InvalidInput(m) if m.contains("depth_scale") => "\"depth_scale\"".into(),
            _ => "\"frames\"".into(),
        };
        err(line_of(&text, &needle), e.to_string())
    })?;
    Ok(manifest)
}

/// Writes `manifest` as pretty JSON with paths relative to the file's directory.
pub fn write_manifest(path: &Path, manifest: &SequenceManifest) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let dir = std::fs::canonicalize(dir).unwrap_or_else(|_| dir.to_path_buf());
    let mut m = manifest.clone();
    for e in &mut m.frames {
        for p in [&mut e.image, &mut e.depth] {
            if let Ok(c) = std::fs::canonicalize(&*p) {
                *p = c;
            }
        }
    }
    let text = serde_json::to_string_pretty(&m.to_file(&dir)).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
