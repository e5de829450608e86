//! File formats, dataset loaders and run configuration.

pub mod codec;
pub mod config;
pub mod manifest;
pub mod tum;

pub use codec::{
    read_depth, read_image, write_assignment_png, write_depth_npy, write_depth_png, write_image, DEFAULT_DEPTH_SCALE,
};
pub use config::RunConfig;
pub use manifest::{load_pair_manifest, write_manifest, FrameEntry, SequenceManifest};
pub use tum::{load_tum_sequence, TumSequence};

use std::path::Path;

use crate::error::Result;

/// Loads a manifest file, or a TUM sequence when `path` is a directory
/// holding `rgb.txt`.
pub fn load_sequence(path: &Path) -> Result<SequenceManifest> {
    if path.is_dir() && path.join("rgb.txt").is_file() {
        return Ok(load_tum_sequence(path, tum::DEFAULT_MAX_DT)?.manifest);
    }
    load_pair_manifest(path)
}
