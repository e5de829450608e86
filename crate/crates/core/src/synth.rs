//! Piecewise-rigid synthetic scenes with analytic ground truth.
//!
//! A scene is a set of textured planes, each moving under its own linearized
//! rigid motion. Texture is a band-limited function of frame-0 plane
//! coordinates, so intensities follow material points exactly from frame to
//! frame.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{apply_motion, project, Intrinsics, Pixel, Point3, RigidMotion};
use crate::depth::{AssignmentMap, DepthMap};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::io::{write_depth_npy, write_image, write_manifest, FrameEntry, SequenceManifest, DEFAULT_DEPTH_SCALE};

const TEXTURE_WAVES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    /// A point on the plane in frame 0, meters.
    pub point: [f64; 3],
    pub normal: [f64; 3],
    /// Frame-0 pixel rectangle `[x0, y0, x1, y1]` covered by the plane;
    /// unbounded when absent.
    #[serde(default)]
    pub region: Option<[f64; 4]>,
    #[serde(default)]
    pub texture_seed: u64,
    /// Multiplier on the scene's texture frequencies; nearer planes need
    /// larger values for a similar image-space texture.
    #[serde(default = "one")]
    pub texture_scale: f64,
    #[serde(default)]
    pub motion: RigidMotion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub intrinsics: Intrinsics,
    pub planes: Vec<PlaneSpec>,
    pub frames: usize,
    /// Standard deviation of additive intensity noise.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    /// Spatial frequency range of the texture, cycles per meter.
    #[serde(default = "default_texture_freq")]
    pub texture_freq: [f64; 2],
}

fn one() -> f64 {
    1.0
}

fn default_texture_freq() -> [f64; 2] {
    [3.0, 14.0]
}

impl SceneSpec {
    /// Background plane with the camera-like motion plus a nearer patch
    /// moving independently, at 640x480.
    pub fn two_plane() -> Self {
        Self {
            intrinsics: Intrinsics {
                f: 525.0,
                xc: 319.5,
                yc: 239.5,
                width: 640,
                height: 480,
            },
            planes: vec![
                PlaneSpec {
                    point: [0.0, 0.0, 4.0],
                    normal: [0.05, -0.1, -1.0],
                    region: None,
                    texture_seed: 1,
                    texture_scale: 1.0,
                    motion: RigidMotion::new([0.002, -0.003, 0.001], [0.02, -0.01, 0.03]),
                },
                PlaneSpec {
                    point: [0.0, 0.0, 2.0],
                    normal: [-0.1, 0.05, -1.0],
                    region: Some([200.0, 140.0, 420.0, 330.0]),
                    texture_seed: 2,
                    texture_scale: 2.0,
                    motion: RigidMotion::new([0.0, 0.008, -0.004], [-0.03, 0.015, -0.02]),
                },
            ],
            frames: 11,
            noise: 0.0,
            seed: 7,
            texture_freq: default_texture_freq(),
        }
    }

    /// The same scene rendered at a different resolution.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let s = width as f64 / self.intrinsics.width as f64;
        let mut out = self.clone();
        out.intrinsics = self.intrinsics.scaled(width, height);
        for p in &mut out.planes {
            if let Some(r) = &mut p.region {
                r.iter_mut().for_each(|v| *v = (*v + 0.5) * s - 0.5);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics
            .validate()
            .map_err(|e| Error::InvalidSpec(format!("intrinsics: {e}")))?;
        if self.frames == 0 {
            return Err(Error::InvalidSpec("frames: must be >= 1".into()));
        }
        if self.planes.is_empty() {
            return Err(Error::InvalidSpec("planes: at least one plane is required".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidSpec("noise: must be finite and >= 0".into()));
        }
        let [lo, hi] = self.texture_freq;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidSpec("texture_freq: need 0 < lo <= hi".into()));
        }
        for (i, p) in self.planes.iter().enumerate() {
            let n = Vector3::from(p.normal);
            let o = Vector3::from(p.point);
            if !(n.norm() > 0.0) || !p.motion.is_finite() || !o.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidSpec(format!("planes[{i}]: non-finite or zero normal")));
            }
            if !(p.texture_scale > 0.0 && p.texture_scale.is_finite()) {
                return Err(Error::InvalidSpec(format!("planes[{i}].texture_scale: must be > 0")));
            }
            if (n.normalize().dot(&o)).abs() < 1e-9 {
                return Err(Error::InvalidSpec(format!(
                    "planes[{i}].normal: plane passes through the camera center"
                )));
            }
            if !(o.z > 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "planes[{i}].point: must be in front of the camera"
                )));
            }
            let k = &self.intrinsics;
            let corners = match p.region {
                Some([x0, y0, x1, y1]) => {
                    if !(x1 > x0 && y1 > y0) {
                        return Err(Error::InvalidSpec(format!("planes[{i}].region: empty rectangle")));
                    }
                    vec![(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
                }
                None => vec![(k.xc, k.yc)],
            };
            for (x, y) in corners {
                let d = ray(Pixel::new(x, y), k);
                let denom = n.dot(&d);
                if denom.abs() < 1e-12 || n.dot(&o) / denom <= 0.0 {
                    return Err(Error::InvalidSpec(format!(
                        "planes[{i}]: not front-facing over its region"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFrame {
    pub image: GrayImage,
    pub depth: DepthMap,
    /// Index of the visible plane per pixel.
    pub segmentation: AssignmentMap,
    /// Motion of each plane over the interval starting at this frame.
    pub motions: Vec<RigidMotion>,
}

#[inline]
fn ray(p: Pixel, k: &Intrinsics) -> Vector3<f64> {
    Vector3::new((p.x - k.xc) / k.f, (p.y - k.yc) / k.f, 1.0)
}

fn cross_matrix(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

struct Wave {
    dir: [f64; 2],
    freq: f64,
    phase: f64,
}

/// A plane advanced `t` frames: material point `X0` sits at `A X0 + c`.
struct PlaneState {
    offset0: f64,
    origin0: Vector3<f64>,
    axes0: [Vector3<f64>; 2],
    inv_a: Matrix3<f64>,
    /// `A^{-T} n0`, the normal of the moved plane.
    normal_t: Vector3<f64>,
    c: Vector3<f64>,
    region: Option<[f64; 4]>,
    waves: Vec<Wave>,
}

fn texture_rng(scene_seed: u64, plane_seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(scene_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ plane_seed.rotate_left(17))
}

fn plane_states(spec: &SceneSpec, t: usize) -> Vec<PlaneState> {
    spec.planes
        .iter()
        .map(|p| {
            let n0 = Vector3::from(p.normal).normalize();
            let o0 = Vector3::from(p.point);
            let helper = if n0.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            let u = n0.cross(&helper).normalize();
            let v = n0.cross(&u);
            let step = Matrix3::identity() + cross_matrix(&p.motion.omega);
            let mut a = Matrix3::identity();
            let mut c = Vector3::zeros();
            for _ in 0..t {
                a = step * a;
                c = apply_motion(&c, &p.motion);
            }
            // det(I + [w]x) = 1 + |w|^2, never singular
            let inv_a = a.try_inverse().expect("linearized motion is invertible");
            let mut rng = texture_rng(spec.seed, p.texture_seed);
            let waves = (0..TEXTURE_WAVES)
                .map(|_| {
                    let theta = rng.random_range(0.0..TAU);
                    Wave {
                        dir: [theta.cos(), theta.sin()],
                        freq: p.texture_scale * rng.random_range(spec.texture_freq[0]..=spec.texture_freq[1]),
                        phase: rng.random_range(0.0..TAU),
                    }
                })
                .collect();
            PlaneState {
                offset0: n0.dot(&o0),
                origin0: o0,
                axes0: [u, v],
                normal_t: inv_a.transpose() * n0,
                inv_a,
                c,
                region: p.region,
                waves,
            }
        })
        .collect()
}

impl PlaneState {
    /// Depth and frame-0 material point where the ray through `p` meets the plane.
    fn intersect(&self, p: Pixel, k: &Intrinsics) -> Option<(f64, Vector3<f64>)> {
        let d = ray(p, k);
        let denom = self.normal_t.dot(&d);
        if denom.abs() < 1e-12 {
            return None;
        }
        let z = (self.offset0 + self.normal_t.dot(&self.c)) / denom;
        if !(z > 0.0) {
            return None;
        }
        let x0 = self.inv_a * (d * z - self.c);
        if let Some([rx0, ry0, rx1, ry1]) = self.region {
            if !(x0.z > 0.0) {
                return None;
            }
            let q = project(&x0, k).ok()?;
            if !(q.x >= rx0 && q.x < rx1 && q.y >= ry0 && q.y < ry1) {
                return None;
            }
        }
        Some((z, x0))
    }

    fn plane_coords(&self, x0: &Vector3<f64>) -> [f64; 2] {
        let r = x0 - self.origin0;
        [r.dot(&self.axes0[0]), r.dot(&self.axes0[1])]
    }

    fn intensity(&self, uv: [f64; 2]) -> f64 {
        let s: f64 = self
            .waves
            .iter()
            .map(|w| (TAU * w.freq * (w.dir[0] * uv[0] + w.dir[1] * uv[1]) + w.phase).sin())
            .sum();
        // unit variance before the soft clip
        let s = s * (2.0 / TEXTURE_WAVES as f64).sqrt();
        0.5 + 0.4 * (1.2 * s).tanh()
    }
}

/// Nearest visible plane along the ray: `(plane index, depth, material point)`.
fn trace(states: &[PlaneState], p: Pixel, k: &Intrinsics) -> Option<(usize, f64, Vector3<f64>)> {
    let mut best: Option<(usize, f64, Vector3<f64>)> = None;
    for (i, s) in states.iter().enumerate() {
        if let Some((z, x0)) = s.intersect(p, k) {
            if best.as_ref().map_or(true, |b| z < b.1) {
                best = Some((i, z, x0));
            }
        }
    }
    best
}

/// Renders frame `t` with each plane advanced `t` times under its motion.
pub fn render_frame(spec: &SceneSpec, t: usize) -> Result<SyntheticFrame> {
    spec.validate()?;
    if t >= spec.frames {
        return Err(Error::invalid(format!(
            "frame {t} out of range ({} frames)",
            spec.frames
        )));
    }
    let k = &spec.intrinsics;
    let (w, h) = k.dims();
    let states = plane_states(spec, t);
    let mut image = vec![0.0f32; w * h];
    let mut depth = vec![0.0f64; w * h];
    let mut labels = vec![None; w * h];
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidSpec(format!("noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xA5A5_0000_0000_0000 ^ t as u64);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut v = 0.0;
            if let Some((plane, z, x0)) = trace(&states, Pixel::new(x as f64, y as f64), k) {
                let s = &states[plane];
                v = s.intensity(s.plane_coords(&x0));
                depth[i] = z;
                labels[i] = Some(plane as u16);
            }
            if spec.noise > 0.0 {
                v += noise.sample(&mut rng);
            }
            image[i] = v.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(SyntheticFrame {
        image: GrayImage::from_vec(w, h, image)?,
        depth: DepthMap::from_vec(w, h, depth)?,
        segmentation: AssignmentMap::from_vec(w, h, labels)?,
        motions: spec.planes.iter().map(|p| p.motion).collect(),
    })
}

pub fn render_sequence(spec: &SceneSpec) -> Result<Vec<SyntheticFrame>> {
    (0..spec.frames).map(|t| render_frame(spec, t)).collect()
}

/// Visible plane and frame-0 plane coordinates of the material seen at `p`
/// in frame `t`.
pub fn material_coords(spec: &SceneSpec, t: usize, p: Pixel) -> Option<(usize, [f64; 2])> {
    let states = plane_states(spec, t);
    let (i, _, x0) = trace(&states, p, &spec.intrinsics)?;
    Some((i, states[i].plane_coords(&x0)))
}

/// Depth and visible plane at `p` in frame `t`.
pub fn depth_at(spec: &SceneSpec, t: usize, p: Pixel) -> Option<(usize, f64)> {
    let states = plane_states(spec, t);
    trace(&states, p, &spec.intrinsics).map(|(i, z, _)| (i, z))
}

/// Analytic correspondence of `p` from frame `t` to `t + 1`.
///
/// `None` when nothing is visible at `p` or the moved point leaves the view.
pub fn true_flow(spec: &SceneSpec, t: usize, p: Pixel) -> Option<Pixel> {
    let k = &spec.intrinsics;
    let (plane, z) = depth_at(spec, t, p)?;
    let point: Point3 = crate::camera::lift(p, z, k).ok()?;
    let moved = apply_motion(&point, &spec.planes[plane].motion);
    let q = project(&moved, k).ok()?;
    let inside = q.x >= 0.0 && q.y >= 0.0 && q.x <= (k.width - 1) as f64 && q.y <= (k.height - 1) as f64;
    inside.then_some(q)
}

/// Reads a scene spec from TOML and validates it.
pub fn load_scene(path: &Path) -> Result<SceneSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SceneSpec = toml::from_str(&text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn scene_to_toml(spec: &SceneSpec) -> String {
    toml::to_string(spec).expect("scene specs are always representable")
}

/// Renders every frame into `dir` (16-bit PNG images, `.npy` depth) and
/// writes `manifest.json` next to them.
pub fn write_sequence(spec: &SceneSpec, dir: &Path) -> Result<SequenceManifest> {
    spec.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let frames = (0..spec.frames)
        .into_par_iter()
        .map(|t| {
            let frame = render_frame(spec, t)?;
            let image = dir.join(format!("image_{t:04}.png"));
            let depth = dir.join(format!("depth_{t:04}.npy"));
            write_image(&image, &frame.image)?;
            write_depth_npy(&depth, &frame.depth)?;
            Ok(FrameEntry {
                t: t as f64,
                image,
                depth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = SequenceManifest {
        intrinsics: spec.intrinsics,
        depth_scale: DEFAULT_DEPTH_SCALE,
        frames,
    };
    write_manifest(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
