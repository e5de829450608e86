//! Pinhole camera model and the linearized rigid motion.
//!
//! The camera frame is right-handed with Z along the optical axis. Pixel
//! coordinates address pixel centers, so `(0, 0)` is the center of the
//! top-left pixel.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 3D point in the camera frame, in meters.
pub type Point3 = Vector3<f64>;

/// Relative tolerance under which `fx` and `fy` are treated as one focal length.
pub const ANISOTROPY_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    /// Principal distance in pixels.
    pub f: f64,
    pub xc: f64,
    pub yc: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(f: f64, xc: f64, yc: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            f,
            xc,
            yc,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Builds intrinsics from separate focal lengths, accepting them only when
    /// they agree to within [`ANISOTROPY_TOLERANCE`]; the mean is used.
    pub fn from_fx_fy(fx: f64, fy: f64, xc: f64, yc: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0) || ((fx - fy) / fx).abs() >= ANISOTROPY_TOLERANCE {
            return Err(Error::invalid(format!(
                "anisotropic focal lengths fx={fx}, fy={fy} are not supported"
            )));
        }
        Self::new(0.5 * (fx + fy), xc, yc, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f.is_finite() && self.f > 0.0) {
            return Err(Error::invalid(format!("focal length must be > 0, got {}", self.f)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image dimensions must be non-zero"));
        }
        if !(self.xc >= 0.0 && self.xc < self.width as f64) {
            return Err(Error::invalid(format!(
                "principal point x {} outside [0, {})",
                self.xc, self.width
            )));
        }
        if !(self.yc >= 0.0 && self.yc < self.height as f64) {
            return Err(Error::invalid(format!(
                "principal point y {} outside [0, {})",
                self.yc, self.height
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Same camera at a different resolution, scaling focal length and principal point.
    pub fn scaled(&self, width: usize, height: usize) -> Self {
        let s = width as f64 / self.width as f64;
        Self {
            f: self.f * s,
            xc: (self.xc + 0.5) * s - 0.5,
            yc: (self.yc + 0.5) * height as f64 / self.height as f64 - 0.5,
            width,
            height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pixel {
    pub x: f64,
    pub y: f64,
}

impl Pixel {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist2(&self, other: &Pixel) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    /// Nearest integer pixel, if it lies inside a `width` x `height` grid.
    pub fn round_in(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        let x = self.x.round();
        let y = self.y.round();
        if x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64 {
            Some((x as usize, y as usize))
        } else {
            None
        }
    }
}

/// Angular velocity `omega` (rad/frame) and translation `t` (m/frame).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidMotion {
    pub omega: Vector3<f64>,
    pub t: Vector3<f64>,
}

impl RigidMotion {
    pub fn new(omega: [f64; 3], t: [f64; 3]) -> Self {
        Self {
            omega: Vector3::from(omega),
            t: Vector3::from(t),
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Parameters stacked as `[omega; t]`.
    pub fn to_array(&self) -> [f64; 6] {
        [self.omega.x, self.omega.y, self.omega.z, self.t.x, self.t.y, self.t.z]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Largest absolute per-component difference.
    pub fn max_abs_diff(&self, other: &RigidMotion) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            omega: self.omega * s,
            t: self.t * s,
        }
    }
}

impl std::ops::Add for RigidMotion {
    type Output = RigidMotion;

    fn add(self, rhs: RigidMotion) -> RigidMotion {
        RigidMotion {
            omega: self.omega + rhs.omega,
            t: self.t + rhs.t,
        }
    }
}

/// Back-projects a pixel at metric depth `z`.
pub fn lift(p: Pixel, z: f64, k: &Intrinsics) -> Result<Point3> {
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::invalid(format!("depth must be finite and > 0, got {z}")));
    }
    Ok(lift_unchecked(p, z, k))
}

#[inline]
pub(crate) fn lift_unchecked(p: Pixel, z: f64, k: &Intrinsics) -> Point3 {
    Point3::new(z * (p.x - k.xc) / k.f, z * (p.y - k.yc) / k.f, z)
}

/// Perspective projection. The result may lie outside the image.
pub fn project(point: &Point3, k: &Intrinsics) -> Result<Pixel> {
    if !(point.z > 0.0) {
        return Err(Error::BehindCamera(point.z));
    }
    Ok(project_unchecked(point, k))
}

#[inline]
pub(crate) fn project_unchecked(point: &Point3, k: &Intrinsics) -> Pixel {
    Pixel::new(k.f * point.x / point.z + k.xc, k.f * point.y / point.z + k.yc)
}

/// `P' = P + omega x P + T`, with no rotation exponentiation.
#[inline]
pub fn apply_motion(point: &Point3, m: &RigidMotion) -> Point3 {
    point + m.omega.cross(point) + m.t
}
