//! Per-pixel motion assignment and depth reprojection.
//!
//! Every estimated motion warps the previous image through the previous depth
//! map; the absolute difference against the current image, smoothed by a
//! guided filter, decides which motion each pixel follows. The previous depth
//! map is then pushed through the assigned motions with a z-buffer.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, Pixel, RigidMotion};
use crate::error::{Error, Result};
use crate::features::{build_correspondences, FlowParams};
use crate::image::{guided_filter, ErrorMap, GrayImage};
use crate::motion::{estimate_motions, MotionParams, MotionSet};

/// Row-major metric depths; `0` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new_invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Non-finite and non-positive entries are stored as invalid.
    pub fn from_vec(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "depth data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        for v in &mut data {
            if !(v.is_finite() && *v > 0.0) {
                *v = 0.0;
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                data.push(if v.is_finite() && v > 0.0 { v } else { 0.0 });
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let v = self.data[y * self.width + x];
        (v > 0.0).then_some(v)
    }

    #[inline]
    pub fn is_valid(&self, idx: usize) -> bool {
        self.data[idx] > 0.0
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = if v.is_finite() && v > 0.0 { v } else { 0.0 };
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Per-pixel index into a [`MotionSet`], `None` where no motion applies.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMap {
    width: usize,
    height: usize,
    data: Vec<Option<u16>>,
}

impl AssignmentMap {
    pub fn new_invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![None; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<Option<u16>>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid("assignment data does not match dimensions"));
        }
        Ok(Self { width, height, data })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[Option<u16>] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<u16> {
        self.data[y * self.width + x]
    }
}

/// The previous image forward-warped by one motion.
#[derive(Debug, Clone)]
pub struct ReprojectionResult {
    pub image: GrayImage,
    /// Depth of the surviving source at each target; invalid where untouched.
    pub depth_buffer: DepthMap,
    /// Row-major source index that won each target pixel.
    pub source_map: Vec<Option<usize>>,
}

/// Distance in pixels by which a warped coordinate may overshoot the image
/// border and still be sampled at the border.
const BORDER_SLACK: f64 = 1e-6;

/// Per-pixel warp of lifted pixels under one motion.
///
/// With `R = I + [w]x` the moved point is `z R ray(x, y) + T`, and `R ray` is
/// affine in `x` along a row, so each pixel costs a few multiply-adds.
struct Warp {
    omega: nalgebra::Vector3<f64>,
    t: nalgebra::Vector3<f64>,
    /// `R` applied to the x unit vector.
    col: nalgebra::Vector3<f64>,
}

impl Warp {
    fn new(m: &RigidMotion) -> Self {
        let o = m.omega;
        Self {
            omega: o,
            t: m.t,
            col: nalgebra::Vector3::new(1.0, o.z, -o.y),
        }
    }

    /// `R (0, ry, 1)`.
    #[inline]
    fn row_base(&self, ry: f64) -> nalgebra::Vector3<f64> {
        let o = &self.omega;
        nalgebra::Vector3::new(-o.z * ry + o.y, ry - o.x, o.x * ry + 1.0)
    }

    /// Moved depth and projection, or `None` behind the camera.
    #[inline]
    fn apply(&self, base: &nalgebra::Vector3<f64>, rx: f64, z: f64, k: &Intrinsics) -> Option<(f64, f64, f64)> {
        let mz = z * (base.z + rx * self.col.z) + self.t.z;
        if !(mz > 0.0) {
            return None;
        }
        let mx = z * (base.x + rx * self.col.x) + self.t.x;
        let my = z * (base.y + rx * self.col.y) + self.t.y;
        let inv = k.f / mz;
        Some((mz, mx * inv + k.xc, my * inv + k.yc))
    }
}

/// Visits every valid pixel of `d0` whose point stays in front of the camera
/// after the motion chosen for it, with `(index, moved depth, x, y)`.
#[inline]
fn for_each_moved(
    d0: &DepthMap,
    warps: &[Warp],
    motion_of: impl Fn(usize) -> usize,
    k: &Intrinsics,
    mut visit: impl FnMut(usize, f64, f64, f64),
) {
    let (w, h) = d0.dims();
    let mut bases = vec![nalgebra::Vector3::zeros(); warps.len()];
    for y in 0..h {
        let ry = (y as f64 - k.yc) / k.f;
        for (b, warp) in bases.iter_mut().zip(warps) {
            *b = warp.row_base(ry);
        }
        let row = &d0.data[y * w..(y + 1) * w];
        for (x, &z) in row.iter().enumerate() {
            if !(z > 0.0) {
                continue;
            }
            let idx = y * w + x;
            let j = motion_of(idx);
            let rx = (x as f64 - k.xc) / k.f;
            if let Some((mz, px, py)) = warps[j].apply(&bases[j], rx, z, k) {
                visit(idx, mz, px, py);
            }
        }
    }
}

/// Nearest-depth-wins forward splat. Equal depths keep the lower source index.
struct ZBuffer {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    source: Vec<Option<usize>>,
}

impl ZBuffer {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width * height],
            source: vec![None; width * height],
        }
    }

    #[inline]
    fn write(&mut self, target: Pixel, z: f64, src: usize) -> bool {
        let Some((x, y)) = target.round_in(self.width, self.height) else {
            return false;
        };
        let t = y * self.width + x;
        let wins = match self.source[t] {
            None => true,
            Some(prev) => z < self.depth[t] || (z == self.depth[t] && src < prev),
        };
        if wins {
            self.depth[t] = z;
            self.source[t] = Some(src);
            true
        } else {
            false
        }
    }
}

fn check_aligned(k: &Intrinsics, dims: &[(usize, usize)]) -> Result<()> {
    for &d in dims {
        if d != k.dims() {
            return Err(Error::DimensionMismatch {
                expected: k.dims(),
                actual: d,
            });
        }
    }
    Ok(())
}

/// Forward-warps `i0` under `m` with the z-buffer rule.
pub fn reproject_image(i0: &GrayImage, d0: &DepthMap, m: &RigidMotion, k: &Intrinsics) -> Result<ReprojectionResult> {
    check_aligned(k, &[i0.dims(), d0.dims()])?;
    let (w, h) = i0.dims();
    let mut zb = ZBuffer::new(w, h);
    for_each_moved(
        d0,
        &[Warp::new(m)],
        |_| 0,
        k,
        |idx, z, x, y| {
            zb.write(Pixel::new(x, y), z, idx);
        },
    );
    let mut image = GrayImage::new(w, h);
    for (t, src) in zb.source.iter().enumerate() {
        if let Some(s) = src {
            image.data_mut()[t] = i0.data()[*s];
        }
    }
    Ok(ReprojectionResult {
        image,
        depth_buffer: DepthMap {
            width: w,
            height: h,
            data: zb.depth,
        },
        source_map: zb.source,
    })
}

/// Absolute photometric error of one motion, on the previous frame's grid.
///
/// Valid where the previous depth is valid and the moved point lands inside
/// the bilinear support of `i1`.
pub fn photometric_error(
    i0: &GrayImage,
    i1: &GrayImage,
    d0: &DepthMap,
    m: &RigidMotion,
    k: &Intrinsics,
) -> Result<ErrorMap> {
    check_aligned(k, &[i0.dims(), i1.dims(), d0.dims()])?;
    let (w, h) = i0.dims();
    let mut out = ErrorMap::new_invalid(w, h);
    let (max_x, max_y) = ((w - 1) as f64, (h - 1) as f64);
    for_each_moved(
        d0,
        &[Warp::new(m)],
        |_| 0,
        k,
        |idx, _, x, y| {
            // rounding noise must not push border pixels out of the support
            let snap = |v: f64, max: f64| {
                if v < 0.0 && v > -BORDER_SLACK {
                    0.0
                } else if v > max && v < max + BORDER_SLACK {
                    max
                } else {
                    v
                }
            };
            if let Some(v) = i1.sample_bilinear(snap(x, max_x), snap(y, max_y)) {
                out.set(idx, (v - i0.data()[idx]).abs());
            }
        },
    );
    Ok(out)
}

/// Guided-filters each error map with `guide`; masks are preserved.
pub fn filter_errors(errors: &[ErrorMap], guide: &GrayImage, radius: usize, eps: f64) -> Result<Vec<ErrorMap>> {
    errors
        .par_iter()
        .map(|e| guided_filter(e, guide, radius, eps))
        .collect()
}

/// Per-pixel argmin over the valid error maps; ties go to the lower index.
pub fn assign_motions(filtered: &[ErrorMap]) -> Result<AssignmentMap> {
    let first = filtered
        .first()
        .ok_or_else(|| Error::invalid("cannot assign motions from an empty list"))?;
    let (w, h) = first.dims();
    if let Some(bad) = filtered.iter().find(|e| e.dims() != (w, h)) {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            actual: bad.dims(),
        });
    }
    let data = (0..w * h)
        .map(|i| {
            let mut best: Option<(u16, f32)> = None;
            for (j, e) in filtered.iter().enumerate() {
                if e.mask()[i] {
                    let v = e.data()[i];
                    if best.map_or(true, |(_, b)| v < b) {
                        best = Some((j as u16, v));
                    }
                }
            }
            best.map(|(j, _)| j)
        })
        .collect();
    Ok(AssignmentMap {
        width: w,
        height: h,
        data,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthParams {
    pub flow: FlowParams,
    pub motion: MotionParams,
    pub filter_radius: usize,
    pub filter_eps: f64,
}

impl Default for DepthParams {
    fn default() -> Self {
        Self {
            flow: FlowParams::default(),
            motion: MotionParams::default(),
            filter_radius: 8,
            filter_eps: 1e-4,
        }
    }
}

impl DepthParams {
    pub fn validate(&self) -> Result<()> {
        self.flow.validate()?;
        self.motion.validate()?;
        if self.filter_radius < 1 {
            return Err(Error::invalid("filter_radius must be >= 1"));
        }
        if !(self.filter_eps > 0.0 && self.filter_eps.is_finite()) {
            return Err(Error::invalid("filter_eps must be > 0"));
        }
        Ok(())
    }
}

/// Wall-clock time per pipeline stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub flow_ms: f64,
    pub motion_ms: f64,
    pub error_ms: f64,
    pub reproject_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct DepthEstimate {
    pub depth: DepthMap,
    pub assignment: AssignmentMap,
    pub motions: MotionSet,
    /// Set when motion estimation failed and the previous depth was carried over.
    pub degraded: Option<String>,
    pub n_correspondences: usize,
    pub timings: StageTimings,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Estimates the current depth map from two images and the previous depth.
///
/// When no correspondences or motions can be found the previous depth map is
/// returned unchanged and the estimate is flagged as degraded.
pub fn estimate_depth(
    i0: &GrayImage,
    i1: &GrayImage,
    d0: &DepthMap,
    k: &Intrinsics,
    params: &DepthParams,
) -> Result<DepthEstimate> {
    params.validate()?;
    check_aligned(k, &[i0.dims(), i1.dims(), d0.dims()])?;
    let (w, h) = i0.dims();
    let start = Instant::now();
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let cs = build_correspondences(i0, i1, d0, k, &params.flow);
    timings.flow_ms = elapsed_ms(t);

    let t = Instant::now();
    let n_correspondences = cs.as_ref().map_or(0, |c| c.len());
    let motions = cs.and_then(|cs| estimate_motions(&cs, k, &params.motion));
    timings.motion_ms = elapsed_ms(t);

    let motions = match motions {
        Ok(m) => m,
        Err(e @ (Error::InsufficientFeatures { .. } | Error::NoMotion { .. })) => {
            log::warn!("motion estimation failed, propagating previous depth: {e}");
            timings.total_ms = elapsed_ms(start);
            return Ok(DepthEstimate {
                depth: d0.clone(),
                assignment: AssignmentMap::new_invalid(w, h),
                motions: MotionSet::default(),
                degraded: Some(e.to_string()),
                n_correspondences,
                timings,
            });
        }
        Err(e) => return Err(e),
    };

    let t = Instant::now();
    let errors = motions
        .motions
        .par_iter()
        .map(|m| photometric_error(i0, i1, d0, m, k))
        .collect::<Result<Vec<_>>>()?;
    let filtered = filter_errors(&errors, i0, params.filter_radius, params.filter_eps)?;
    let assignment = assign_motions(&filtered)?;
    timings.error_ms = elapsed_ms(t);

    let t = Instant::now();
    let depth = reproject_depth(d0, &assignment, &motions.motions, k);
    timings.reproject_ms = elapsed_ms(t);
    timings.total_ms = elapsed_ms(start);

    Ok(DepthEstimate {
        depth,
        assignment,
        motions,
        degraded: None,
        n_correspondences,
        timings,
    })
}

/// Pushes every valid previous-depth pixel through its assigned motion
/// (motion 0 where unassigned) and keeps the nearest depth per target.
///
/// # Panics
///
/// If `motions` is empty or an assignment refers past its end.
pub fn reproject_depth(d0: &DepthMap, assignment: &AssignmentMap, motions: &[RigidMotion], k: &Intrinsics) -> DepthMap {
    let (w, h) = d0.dims();
    let mut zb = ZBuffer::new(w, h);
    let warps: Vec<Warp> = motions.iter().map(Warp::new).collect();
    for_each_moved(
        d0,
        &warps,
        |idx| assignment.data[idx].unwrap_or(0) as usize,
        k,
        |idx, z, x, y| {
            zb.write(Pixel::new(x, y), z, idx);
        },
    );
    DepthMap {
        width: w,
        height: h,
        data: zb.depth,
    }
}
