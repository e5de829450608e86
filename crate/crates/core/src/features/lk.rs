//! Pyramidal Lucas-Kanade sparse tracking.

use std::borrow::Cow;

use rayon::prelude::*;

use crate::camera::Pixel;
use crate::image::GrayImage;

use super::FlowParams;

/// Smallest pyramid level side, in pixels.
const MIN_LEVEL_SIZE: usize = 16;

pub(crate) struct Pyramid<'a> {
    pub levels: Vec<Cow<'a, GrayImage>>,
}

impl<'a> Pyramid<'a> {
    pub fn build(img: &'a GrayImage, max_levels: usize) -> Self {
        let mut levels = vec![Cow::Borrowed(img)];
        while levels.len() < max_levels.max(1) {
            let prev = levels.last().unwrap();
            if prev.width() / 2 < MIN_LEVEL_SIZE || prev.height() / 2 < MIN_LEVEL_SIZE {
                break;
            }
            let next = downsample(prev);
            levels.push(Cow::Owned(next));
        }
        Self { levels }
    }
}

/// 5-tap binomial blur followed by 2x decimation, replicated border.
fn downsample(img: &GrayImage) -> GrayImage {
    const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (w, h) = img.dims();
    let data = img.data();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let nw = (w + 1) / 2;
    let nh = (h + 1) / 2;
    // horizontal pass at decimated columns
    let mut tmp = vec![0.0f32; nw * h];
    for (row, out) in data.chunks_exact(w).zip(tmp.chunks_exact_mut(nw)) {
        for (nx, o) in out.iter_mut().enumerate() {
            let cx = 2 * nx;
            *o = if cx >= 2 && cx + 2 < w {
                let t = &row[cx - 2..cx + 3];
                K[0] * t[0] + K[1] * t[1] + K[2] * t[2] + K[3] * t[3] + K[4] * t[4]
            } else {
                K.iter()
                    .enumerate()
                    .map(|(k, wk)| wk * row[clamp(cx as isize + k as isize - 2, w)])
                    .sum()
            };
        }
    }
    let mut out = vec![0.0f32; nw * nh];
    for (ny, dst) in out.chunks_exact_mut(nw).enumerate() {
        let rows = [-2isize, -1, 0, 1, 2].map(|d| &tmp[clamp(2 * ny as isize + d, h) * nw..][..nw]);
        for (x, o) in dst.iter_mut().enumerate() {
            *o = K[0] * rows[0][x] + K[1] * rows[1][x] + K[2] * rows[2][x] + K[3] * rows[3][x] + K[4] * rows[4][x];
        }
    }
    GrayImage::from_vec(nw, nh, out).expect("finite pyramid level")
}

/// Bilinear samples of a `cols x rows` grid with unit spacing whose first
/// sample is at `(x0, y0)`, row-major. All samples share one set of weights.
/// Returns false when the grid leaves the sampling support
/// `[0, w-1] x [0, h-1]`.
fn sample_grid(img: &GrayImage, x0: f64, y0: f64, cols: usize, rows: usize, out: &mut [f32]) -> bool {
    let (w, h) = img.dims();
    if !(x0 >= 0.0 && y0 >= 0.0 && x0 + (cols - 1) as f64 <= (w - 1) as f64 && y0 + (rows - 1) as f64 <= (h - 1) as f64)
    {
        return false;
    }
    let (xi, yi) = (x0 as usize, y0 as usize);
    let (fx, fy) = ((x0 - xi as f64) as f32, (y0 - yi as f64) as f32);
    let (w00, w10, w01, w11) = ((1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy);
    let data = img.data();
    if xi + cols < w && yi + rows < h {
        for (j, dst) in out[..cols * rows].chunks_exact_mut(cols).enumerate() {
            let r0 = &data[(yi + j) * w + xi..][..cols + 1];
            let r1 = &data[(yi + j + 1) * w + xi..][..cols + 1];
            for (i, o) in dst.iter_mut().enumerate() {
                *o = w00 * r0[i] + w10 * r0[i + 1] + w01 * r1[i] + w11 * r1[i + 1];
            }
        }
        return true;
    }
    // the grid touches the last row or column, where the weight is zero
    for j in 0..rows {
        let row0 = (yi + j) * w;
        let row1 = (yi + j + 1).min(h - 1) * w;
        for i in 0..cols {
            let c0 = xi + i;
            let c1 = (c0 + 1).min(w - 1);
            out[j * cols + i] =
                w00 * data[row0 + c0] + w10 * data[row0 + c1] + w01 * data[row1 + c0] + w11 * data[row1 + c1];
        }
    }
    true
}

/// Bilinear samples of the `(2r+1)^2` window centered at `(x, y)`.
fn sample_window(img: &GrayImage, x: f64, y: f64, r: usize, out: &mut [f32]) -> bool {
    let n = 2 * r + 1;
    sample_grid(img, x - r as f64, y - r as f64, n, n, out)
}

/// Window intensities and Scharr derivatives at `(x, y)`. The derivatives are
/// taken on a bilinear grid one sample wider than the window, which equals
/// sampling the derivative images; near the border the grid is clamped to the
/// image, matching a replicated border. Returns false when the window itself
/// leaves the sampling support.
fn sample_with_gradients(
    img: &GrayImage,
    x: f64,
    y: f64,
    r: usize,
    ext: &mut [f32],
    i0: &mut [f32],
    ix: &mut [f32],
    iy: &mut [f32],
) -> bool {
    let n = 2 * r + 1;
    let m = n + 2;
    if !sample_grid(img, x - r as f64 - 1.0, y - r as f64 - 1.0, m, m, ext) {
        if !sample_window(img, x, y, r, i0) {
            return false;
        }
        let (w, h) = img.dims();
        for j in 0..m {
            for i in 0..m {
                let sx = (x - r as f64 - 1.0 + i as f64).clamp(0.0, (w - 1) as f64);
                let sy = (y - r as f64 - 1.0 + j as f64).clamp(0.0, (h - 1) as f64);
                ext[j * m + i] = img.sample_bilinear(sx, sy).unwrap_or(0.0);
            }
        }
    }
    for j in 0..n {
        let up = &ext[j * m..][..m];
        let mid = &ext[(j + 1) * m..][..m];
        let down = &ext[(j + 2) * m..][..m];
        for i in 0..n {
            let k = j * n + i;
            i0[k] = mid[i + 1];
            ix[k] = (3.0 * (up[i + 2] - up[i]) + 10.0 * (mid[i + 2] - mid[i]) + 3.0 * (down[i + 2] - down[i])) / 32.0;
            iy[k] =
                (3.0 * (down[i] - up[i]) + 10.0 * (down[i + 1] - up[i + 1]) + 3.0 * (down[i + 2] - up[i + 2])) / 32.0;
        }
    }
    true
}

enum LevelOutcome {
    Converged([f64; 2]),
    /// Window or tensor unusable at this level; estimate left unchanged.
    Skipped,
    Failed,
}

/// Per-thread scratch windows.
struct Scratch {
    ext: Vec<f32>,
    i0: Vec<f32>,
    ix: Vec<f32>,
    iy: Vec<f32>,
    i1: Vec<f32>,
}

impl Scratch {
    fn new(r: usize) -> Self {
        let n = (2 * r + 1) * (2 * r + 1);
        Self {
            ext: vec![0.0; (2 * r + 3) * (2 * r + 3)],
            i0: vec![0.0; n],
            ix: vec![0.0; n],
            iy: vec![0.0; n],
            i1: vec![0.0; n],
        }
    }
}

/// Tracks `points` from `img0` into `img1`. Each result carries the new
/// position and whether tracking succeeded; failed points keep their input
/// position.
pub fn lk_track(img0: &GrayImage, img1: &GrayImage, points: &[Pixel], params: &FlowParams) -> Vec<(Pixel, bool)> {
    if img0.dims() != img1.dims() {
        return points.iter().map(|&p| (p, false)).collect();
    }
    let p0 = Pyramid::build(img0, params.lk_pyramid_levels);
    let p1 = Pyramid::build(img1, p0.levels.len());
    let levels: Vec<(&GrayImage, &GrayImage)> = p0
        .levels
        .iter()
        .map(|l| &**l)
        .zip(p1.levels.iter().map(|l| &**l))
        .collect();

    points
        .par_iter()
        .map_init(
            || Scratch::new(params.lk_window),
            |scratch, &p| match track_point(&levels, p, params, scratch) {
                Some(q) => (q, true),
                None => (p, false),
            },
        )
        .collect()
}

fn track_point(levels: &[(&GrayImage, &GrayImage)], p: Pixel, params: &FlowParams, s: &mut Scratch) -> Option<Pixel> {
    let mut flow = [0.0f64; 2];
    for (lvl, &(img0, img1)) in levels.iter().enumerate().rev() {
        let scale = 1.0 / (1u32 << lvl) as f64;
        let q = Pixel::new(p.x * scale, p.y * scale);
        match refine_level(img0, img1, q, flow, params, lvl == 0, s) {
            LevelOutcome::Converged(d) => flow = d,
            LevelOutcome::Skipped => {}
            LevelOutcome::Failed => return None,
        }
        if lvl > 0 {
            flow = [flow[0] * 2.0, flow[1] * 2.0];
        }
    }
    let out = Pixel::new(p.x + flow[0], p.y + flow[1]);
    (out.x.is_finite() && out.y.is_finite()).then_some(out)
}

fn refine_level(
    img0: &GrayImage,
    img1: &GrayImage,
    q: Pixel,
    guess: [f64; 2],
    params: &FlowParams,
    finest: bool,
    s: &mut Scratch,
) -> LevelOutcome {
    let unusable = if finest {
        LevelOutcome::Failed
    } else {
        LevelOutcome::Skipped
    };
    let r = params.lk_window;
    let n = (2 * r + 1) * (2 * r + 1);
    if !sample_with_gradients(img0, q.x, q.y, r, &mut s.ext, &mut s.i0, &mut s.ix, &mut s.iy) {
        return unusable;
    }
    let (i0, ix, iy) = (&s.i0[..n], &s.ix[..n], &s.iy[..n]);
    let (mut gxx, mut gxy, mut gyy) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in ix.iter().zip(iy) {
        let (a, b) = (a as f64, b as f64);
        gxx += a * a;
        gxy += a * b;
        gyy += b * b;
    }
    let det = gxx * gyy - gxy * gxy;
    let half_tr = 0.5 * (gxx + gyy);
    let min_eig = half_tr - (half_tr * half_tr - det).max(0.0).sqrt();
    if !(min_eig / n as f64 >= params.lk_min_eigen) || det <= 0.0 {
        return unusable;
    }

    let max_flow = 2.0 * (img0.width().max(img0.height())) as f64;
    let mut d = guess;
    for _ in 0..params.lk_max_iters {
        if !sample_window(img1, q.x + d[0], q.y + d[1], r, &mut s.i1) {
            return unusable;
        }
        let (mut bx, mut by) = (0.0f32, 0.0f32);
        for k in 0..n {
            let e = i0[k] - s.i1[k];
            bx += e * ix[k];
            by += e * iy[k];
        }
        let (bx, by) = (bx as f64, by as f64);
        let step = [(gyy * bx - gxy * by) / det, (gxx * by - gxy * bx) / det];
        d[0] += step[0];
        d[1] += step[1];
        if !(d[0].abs() < max_flow && d[1].abs() < max_flow) {
            return LevelOutcome::Failed;
        }
        if step[0] * step[0] + step[1] * step[1] < params.lk_epsilon * params.lk_epsilon {
            break;
        }
    }
    LevelOutcome::Converged(d)
}
