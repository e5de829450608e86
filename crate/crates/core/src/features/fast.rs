//! FAST-9 segment-test corners with score-based non-maximum suppression.

use crate::camera::Pixel;
use crate::error::{Error, Result};
use crate::image::GrayImage;

use super::FlowParams;

/// Bresenham circle of radius 3, clockwise from the top.
pub const CIRCLE: [(isize, isize); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

// plain comparisons; inputs are finite
#[inline]
fn fmin(a: f32, b: f32) -> f32 {
    if a < b {
        a
    } else {
        b
    }
}

#[inline]
fn fmax(a: f32, b: f32) -> f32 {
    if a > b {
        a
    } else {
        b
    }
}

/// Largest threshold for which `(x, y)` still passes the FAST-9 test, i.e. the
/// best arc's weakest contrast. The pixel is a corner at threshold `t` iff the
/// score exceeds `t`. Caller guarantees a 3-pixel border.
pub fn corner_score(img: &GrayImage, x: usize, y: usize) -> f32 {
    let w = img.width() as isize;
    let data = img.data();
    let base = y as isize * w + x as isize;
    let c = data[base as usize];
    // circle differences, doubled so every 9-arc is contiguous
    let mut d = [0.0f32; 32];
    for (k, &(dx, dy)) in CIRCLE.iter().enumerate() {
        d[k] = data[(base + dy * w + dx) as usize] - c;
        d[k + 16] = d[k];
    }
    // arc minima and maxima over 9 samples by doubling: 2, 4, 8, then +1
    let mut lo2 = [0.0f32; 31];
    let mut hi2 = [0.0f32; 31];
    for i in 0..31 {
        lo2[i] = fmin(d[i], d[i + 1]);
        hi2[i] = fmax(d[i], d[i + 1]);
    }
    let mut lo4 = [0.0f32; 29];
    let mut hi4 = [0.0f32; 29];
    for i in 0..29 {
        lo4[i] = fmin(lo2[i], lo2[i + 2]);
        hi4[i] = fmax(hi2[i], hi2[i + 2]);
    }
    let mut best = f32::MIN;
    for i in 0..16 {
        let lo = fmin(fmin(lo4[i], lo4[i + 4]), d[i + 8]);
        let hi = fmax(fmax(hi4[i], hi4[i + 4]), d[i + 8]);
        // brighter arc: min(p - c); darker arc: min(c - p) = -max(p - c)
        best = fmax(fmax(best, lo), -hi);
    }
    best
}

/// Whether a 16-bit circular mask holds at least `ARC` contiguous set bits.
#[inline]
fn has_arc(mask: u32) -> bool {
    let d = mask | (mask << 16);
    let r2 = d & (d >> 1);
    let r4 = r2 & (r2 >> 2);
    let r8 = r4 & (r4 >> 4);
    r8 & (d >> 8) != 0
}

/// Per-row buffers for the segment test and score, each holding one row of
/// `n` interior pixels per circle position.
struct RowScratch {
    n: usize,
    bright: Vec<u32>,
    dark: Vec<u32>,
    diff: Vec<f32>,
    lo: Vec<f32>,
    hi: Vec<f32>,
    lo4: Vec<f32>,
    hi4: Vec<f32>,
    score: Vec<f32>,
}

impl RowScratch {
    fn new(n: usize) -> Self {
        Self {
            n,
            bright: vec![0; n],
            dark: vec![0; n],
            diff: vec![0.0; 16 * n],
            lo: vec![0.0; 16 * n],
            hi: vec![0.0; 16 * n],
            lo4: vec![0.0; 16 * n],
            hi4: vec![0.0; 16 * n],
            score: vec![0.0; n],
        }
    }

    /// Segment-test masks and [`corner_score`] for every interior pixel of
    /// row `y`, indexed from column 3. Same arithmetic as `corner_score`,
    /// laid out so each step runs across the row.
    fn fill(&mut self, data: &[f32], w: usize, y: usize, t: f32) {
        let n = self.n;
        let center = &data[y * w + 3..][..n];
        self.bright.fill(0);
        self.dark.fill(0);
        for (k, &(dx, dy)) in CIRCLE.iter().enumerate() {
            let start = ((y as isize + dy) * w as isize + 3 + dx) as usize;
            let ring = &data[start..][..n];
            let diff = &mut self.diff[k * n..][..n];
            for ((((b, d), e), &c), &v) in self
                .bright
                .iter_mut()
                .zip(&mut self.dark)
                .zip(diff)
                .zip(center)
                .zip(ring)
            {
                *b |= ((v > c + t) as u32) << k;
                *d |= ((v < c - t) as u32) << k;
                *e = v - c;
            }
        }
        // circular arc extrema over 2, 4, then 9 positions
        let row = |k: usize| (k % 16) * n..(k % 16) * n + n;
        for k in 0..16 {
            let (x, y) = (&self.diff[row(k)], &self.diff[row(k + 1)]);
            let (lo, hi) = (&mut self.lo[row(k)], &mut self.hi[row(k)]);
            for (((l, h), &x), &y) in lo.iter_mut().zip(hi.iter_mut()).zip(x).zip(y) {
                *l = fmin(x, y);
                *h = fmax(x, y);
            }
        }
        for k in 0..16 {
            let (la, lb) = (&self.lo[row(k)], &self.lo[row(k + 2)]);
            let (ha, hb) = (&self.hi[row(k)], &self.hi[row(k + 2)]);
            let (lo4, hi4) = (&mut self.lo4[row(k)], &mut self.hi4[row(k)]);
            for ((((l, h), &la), &lb), (&ha, &hb)) in lo4
                .iter_mut()
                .zip(hi4.iter_mut())
                .zip(la)
                .zip(lb)
                .zip(ha.iter().zip(hb))
            {
                *l = fmin(la, lb);
                *h = fmax(ha, hb);
            }
        }
        self.score.fill(f32::MIN);
        for k in 0..16 {
            let (la, lb) = (&self.lo4[row(k)], &self.lo4[row(k + 4)]);
            let (ha, hb) = (&self.hi4[row(k)], &self.hi4[row(k + 4)]);
            let d8 = &self.diff[row(k + 8)];
            for ((((s, &la), &lb), (&ha, &hb)), &d) in
                self.score.iter_mut().zip(la).zip(lb).zip(ha.iter().zip(hb)).zip(d8)
            {
                let lo = fmin(fmin(la, lb), d);
                let hi = fmax(fmax(ha, hb), d);
                *s = fmax(fmax(*s, lo), -hi);
            }
        }
    }
}

/// FAST-9 corner detection.
///
/// Returns corners in row-major order after 3x3 non-maximum suppression on the
/// score, greedy spacing by descending score, and the `max_corners` cap.
pub fn detect_fast(img: &GrayImage, params: &FlowParams) -> Result<Vec<Pixel>> {
    let (w, h) = img.dims();
    if w < 7 || h < 7 {
        return Err(Error::invalid(format!(
            "image {w}x{h} is too small for FAST (need at least 7x7)"
        )));
    }
    let t = params.fast_threshold;
    let data = img.data();
    let mut scores = vec![0.0f32; w * h];
    let mut row = RowScratch::new(w - 6);
    for y in 3..h - 3 {
        row.fill(data, w, y, t);
        let out = &mut scores[y * w + 3..][..w - 6];
        for (((o, &b), &d), &s) in out.iter_mut().zip(&row.bright).zip(&row.dark).zip(&row.score) {
            // strictly above t whenever the segment test passes
            *o = if has_arc(b) | has_arc(d) { s } else { 0.0 };
        }
    }

    let mut candidates: Vec<(f32, usize)> = Vec::new();
    for y in 3..h - 3 {
        for x in 3..w - 3 {
            let i = y * w + x;
            let s = scores[i];
            if s <= 0.0 {
                continue;
            }
            let mut keep = true;
            'nms: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let j = (i as isize + dy * w as isize + dx) as usize;
                    // equal scores: the earlier pixel in raster order wins
                    if scores[j] > s || (scores[j] == s && j < i) {
                        keep = false;
                        break 'nms;
                    }
                }
            }
            if keep {
                candidates.push((s, i));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let selected = select_spaced(&candidates, w, h, params.min_corner_distance, params.max_corners);
    Ok(selected
        .into_iter()
        .map(|i| Pixel::new((i % w) as f64, (i / w) as f64))
        .collect())
}

/// Greedy spacing over score-sorted candidates; returns raster indices in
/// row-major order.
fn select_spaced(candidates: &[(f32, usize)], w: usize, h: usize, min_dist: f64, cap: usize) -> Vec<usize> {
    let cell = min_dist.max(1.0);
    let gw = (w as f64 / cell).ceil() as usize + 1;
    let gh = (h as f64 / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<(f64, f64)>> = vec![Vec::new(); gw * gh];
    let min_d2 = min_dist * min_dist;
    let mut out = Vec::new();
    for &(_, i) in candidates {
        if out.len() >= cap {
            break;
        }
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let (cx, cy) = ((x / cell) as usize, (y / cell) as usize);
        let mut free = true;
        'cells: for gy in cy.saturating_sub(1)..=(cy + 1).min(gh - 1) {
            for gx in cx.saturating_sub(1)..=(cx + 1).min(gw - 1) {
                if grid[gy * gw + gx]
                    .iter()
                    .any(|&(px, py)| (px - x).powi(2) + (py - y).powi(2) < min_d2)
                {
                    free = false;
                    break 'cells;
                }
            }
        }
        if free {
            grid[cy * gw + cx].push((x, y));
            out.push(i);
        }
    }
    out.sort_unstable();
    out
}
