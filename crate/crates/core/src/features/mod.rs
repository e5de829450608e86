//! Sparse correspondences: FAST corners in the previous image, tracked into
//! the current one with pyramidal Lucas-Kanade and lifted through the
//! previous depth map.

mod fast;
mod lk;

pub use fast::{corner_score, detect_fast, CIRCLE};
pub use lk::lk_track;

use serde::{Deserialize, Serialize};

use crate::camera::{lift_unchecked, Intrinsics, Pixel, Point3};
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Minimum number of correspondences needed to fit a rigid motion.
pub const MIN_CORRESPONDENCES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    /// Integer detection position in the previous frame.
    pub p: Pixel,
    /// Tracked (sub-pixel) position in the current frame.
    pub p_prime: Pixel,
    /// Lift of `p` through the previous depth map.
    pub point: Point3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    /// Segment-test contrast, in normalized intensity units.
    pub fast_threshold: f32,
    pub max_corners: usize,
    pub min_corner_distance: f64,
    /// Half-width of the LK window; the window is `2r+1` pixels wide.
    pub lk_window: usize,
    pub lk_pyramid_levels: usize,
    pub lk_max_iters: usize,
    /// Convergence threshold on the LK update, in pixels.
    pub lk_epsilon: f64,
    /// Minimum eigenvalue of the structure tensor per window pixel.
    pub lk_min_eigen: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            fast_threshold: 20.0 / 255.0,
            max_corners: 500,
            min_corner_distance: 8.0,
            lk_window: 10,
            lk_pyramid_levels: 3,
            lk_max_iters: 30,
            lk_epsilon: 0.01,
            lk_min_eigen: 1e-5,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        let positive = self.fast_threshold > 0.0
            && self.max_corners > 0
            && self.min_corner_distance > 0.0
            && self.lk_pyramid_levels > 0
            && self.lk_max_iters > 0
            && self.lk_epsilon > 0.0
            && self.lk_min_eigen > 0.0;
        if !positive {
            return Err(Error::invalid("flow parameters must all be positive"));
        }
        if self.lk_window < 2 {
            return Err(Error::invalid("lk_window must be >= 2"));
        }
        Ok(())
    }
}

/// Detects, filters by depth validity, tracks and lifts correspondences.
/// Order follows the row-major detection order.
pub fn build_correspondences(
    img0: &GrayImage,
    img1: &GrayImage,
    depth0: &DepthMap,
    k: &Intrinsics,
    params: &FlowParams,
) -> Result<Vec<Correspondence>> {
    for dims in [img1.dims(), depth0.dims()] {
        if dims != img0.dims() {
            return Err(Error::DimensionMismatch {
                expected: img0.dims(),
                actual: dims,
            });
        }
    }
    let corners: Vec<Pixel> = detect_fast(img0, params)?
        .into_iter()
        .filter(|p| depth0.get(p.x as usize, p.y as usize).is_some())
        .collect();
    let tracked = lk_track(img0, img1, &corners, params);

    let out: Vec<Correspondence> = corners
        .iter()
        .zip(tracked)
        .filter(|(_, (_, ok))| *ok)
        .map(|(&p, (p_prime, _))| {
            let z = depth0.get(p.x as usize, p.y as usize).unwrap();
            Correspondence {
                p,
                p_prime,
                point: lift_unchecked(p, z, k),
            }
        })
        .collect();
    if out.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientFeatures {
            found: out.len(),
            needed: MIN_CORRESPONDENCES,
        });
    }
    Ok(out)
}
