//! Dense depth estimation for dynamic scenes by propagating the previous
//! depth map.
//!
//! Sparse flow between two consecutive images is lifted into 3-D through the
//! previous depth map. Independent rigid motions are extracted with
//! sequential RANSAC, each motion is scored per pixel by a guided-filtered
//! photometric error, and the previous depth map is reprojected under the
//! per-pixel winner.
//!
//! ```no_run
//! use depthprop_core::{estimate_depth, synth::{render_frame, SceneSpec}, DepthParams};
//!
//! let spec = SceneSpec::two_plane();
//! let (f0, f1) = (render_frame(&spec, 0)?, render_frame(&spec, 1)?);
//! let est = estimate_depth(&f0.image, &f1.image, &f0.depth, &spec.intrinsics, &DepthParams::default())?;
//! println!("{} motions", est.motions.len());
//! # Ok::<(), depthprop_core::Error>(())
//! ```

pub mod camera;
pub mod depth;
pub mod error;
pub mod eval;
pub mod features;
pub mod image;
pub mod io;
pub mod motion;
pub mod synth;

pub use camera::{apply_motion, lift, project, Intrinsics, Pixel, Point3, RigidMotion};
pub use depth::{
    assign_motions, estimate_depth, filter_errors, photometric_error, reproject_depth, reproject_image, AssignmentMap,
    DepthEstimate, DepthMap, DepthParams, StageTimings,
};
pub use error::{Error, Result};
pub use eval::{aggregate, compute_metrics, sequential_run, Frame, FrameMetrics, SequenceReport, SequentialRun};
pub use features::{build_correspondences, Correspondence, FlowParams};
pub use image::{guided_filter, ErrorMap, GrayImage};
pub use motion::{estimate_motions, ransac_motion, solve_motion, MotionParams, MotionSet};
