//! Grayscale images, bilinear sampling and the (masked) guided filter.

use crate::error::{Error, Result};

/// Row-major single-precision intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "image data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite intensity {v}")));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
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
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear interpolation of the four neighbours of `(x, y)`.
    ///
    /// Returns `None` when the 2x2 support leaves `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f32> {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
            return None;
        }
        // truncation is floor here: both coordinates are non-negative
        let x0 = (x as usize).min(self.width.saturating_sub(2));
        let y0 = (y as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let r0 = y0 * self.width;
        let r1 = y1 * self.width;
        let top = self.data[r0 + x0] + fx * (self.data[r0 + x1] - self.data[r0 + x0]);
        let bot = self.data[r1 + x0] + fx * (self.data[r1 + x1] - self.data[r1 + x0]);
        Some(top + fy * (bot - top))
    }
}

/// A color channel that can be normalized to `[0, 1]`.
pub trait Channel: Copy {
    fn normalized(self) -> f32;
}

impl Channel for u8 {
    fn normalized(self) -> f32 {
        self as f32 / 255.0
    }
}

impl Channel for u16 {
    fn normalized(self) -> f32 {
        self as f32 / 65535.0
    }
}

impl Channel for f32 {
    fn normalized(self) -> f32 {
        self
    }
}

/// Rec.601 luma of an interleaved RGB buffer.
pub fn to_gray<T: Channel>(width: usize, height: usize, rgb: &[T]) -> Result<GrayImage> {
    if rgb.len() != 3 * width * height {
        return Err(Error::invalid(format!(
            "rgb buffer has {} values, expected 3x{}x{}",
            rgb.len(),
            width,
            height
        )));
    }
    let data = rgb
        .chunks_exact(3)
        .map(|c| {
            let l = 0.299 * c[0].normalized() + 0.587 * c[1].normalized() + 0.114 * c[2].normalized();
            l.clamp(0.0, 1.0)
        })
        .collect();
    GrayImage::from_vec(width, height, data)
}

/// Non-negative per-pixel error with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
    mask: Vec<bool>,
}

impl ErrorMap {
    pub fn new_invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
            mask: vec![false; width * height],
        }
    }

    /// A fully valid map.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        let mask = vec![true; data.len()];
        Self::from_parts(width, height, data, mask)
    }

    pub fn from_parts(width: usize, height: usize, data: Vec<f32>, mask: Vec<bool>) -> Result<Self> {
        if data.len() != width * height || mask.len() != width * height {
            return Err(Error::invalid("error map buffers do not match dimensions"));
        }
        if data.iter().zip(&mask).any(|(v, &m)| m && !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("valid error entries must be finite and >= 0"));
        }
        Ok(Self {
            width,
            height,
            data,
            mask,
        })
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
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        let i = y * self.width + x;
        self.mask[i].then(|| self.data[i])
    }

    #[inline]
    pub(crate) fn set(&mut self, idx: usize, v: f32) {
        self.data[idx] = v;
        self.mask[idx] = true;
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Every valid entry multiplied by `s`.
    pub fn scaled(&self, s: f32) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }
}

fn check_radius(width: usize, height: usize, radius: usize) -> Result<()> {
    if radius < 1 {
        return Err(Error::invalid("filter radius must be >= 1"));
    }
    if radius >= width.min(height) {
        return Err(Error::invalid(format!(
            "filter radius {radius} must be smaller than min({width}, {height})"
        )));
    }
    Ok(())
}

/// Streaming window sums over `(2r+1)^2` windows truncated at the borders,
/// for `C` channels at once. Rows go in with [`push`](Self::push) in order;
/// each output row comes out of [`pop`](Self::pop) once the rows below it
/// are in. Only `2r+2` rows of horizontal sums are kept.
struct RunningBox<const C: usize> {
    width: usize,
    height: usize,
    r: usize,
    ring: Vec<[f64; C]>,
    acc: Vec<[f64; C]>,
    pushed: usize,
    popped: usize,
}

impl<const C: usize> RunningBox<C> {
    /// Requires `r < width` and `r < height`.
    fn new(width: usize, height: usize, r: usize) -> Self {
        Self {
            width,
            height,
            r,
            ring: vec![[0.0; C]; (2 * r + 2) * width],
            acc: vec![[0.0; C]; width],
            pushed: 0,
            popped: 0,
        }
    }

    fn slot(&self, row: usize) -> std::ops::Range<usize> {
        let start = (row % (2 * self.r + 2)) * self.width;
        start..start + self.width
    }

    fn push(&mut self, src: &[[f64; C]]) {
        let (w, r) = (self.width, self.r);
        let range = self.slot(self.pushed);
        let dst = &mut self.ring[range];
        let add = |a: &mut [f64; C], v: &[f64; C]| a.iter_mut().zip(v).for_each(|(a, v)| *a += v);
        let sub = |a: &mut [f64; C], v: &[f64; C]| a.iter_mut().zip(v).for_each(|(a, v)| *a -= v);
        let mut acc = [0.0; C];
        for v in &src[..r] {
            add(&mut acc, v);
        }
        if w < 2 * r + 2 {
            for x in 0..w {
                if x + r < w {
                    add(&mut acc, &src[x + r]);
                }
                if x > r {
                    sub(&mut acc, &src[x - r - 1]);
                }
                dst[x] = acc;
            }
            self.pushed += 1;
            return;
        }
        for x in 0..=r {
            add(&mut acc, &src[x + r]);
            dst[x] = acc;
        }
        for x in r + 1..w - r {
            add(&mut acc, &src[x + r]);
            sub(&mut acc, &src[x - r - 1]);
            dst[x] = acc;
        }
        for x in w - r..w {
            sub(&mut acc, &src[x - r - 1]);
            dst[x] = acc;
        }
        self.pushed += 1;
    }

    /// Next output row and its index, once enough rows are in.
    fn pop(&mut self) -> Option<(usize, &[[f64; C]])> {
        let (y, r, h) = (self.popped, self.r, self.height);
        if y >= h || self.pushed < (y + r + 1).min(h) {
            return None;
        }
        let mut acc = std::mem::take(&mut self.acc);
        let mut add_row = |row: usize, sign: f64| {
            for (a, v) in acc.iter_mut().zip(&self.ring[self.slot(row)]) {
                a.iter_mut().zip(v).for_each(|(a, v)| *a += sign * v);
            }
        };
        if y == 0 {
            for row in 0..=r.min(h - 1) {
                add_row(row, 1.0);
            }
        } else {
            if y + r < h {
                add_row(y + r, 1.0);
            }
            if y > r {
                add_row(y - r - 1, -1.0);
            }
        }
        self.acc = acc;
        self.popped += 1;
        Some((y, &self.acc))
    }
}

/// Window sums over `(2r+1)^2` windows truncated at the borders. Cost is
/// independent of `r`.
pub(crate) fn box_sum(src: &[f64], width: usize, height: usize, r: usize, out: &mut [f64]) {
    let mut boxes = RunningBox::<1>::new(width, height, r);
    let mut row = vec![[0.0]; width];
    for s in src.chunks_exact(width) {
        row.iter_mut().zip(s).for_each(|(d, v)| *d = [*v]);
        boxes.push(&row);
        while let Some((y, sums)) = boxes.pop() {
            out[y * width..][..width]
                .iter_mut()
                .zip(sums)
                .for_each(|(o, s)| *o = s[0]);
        }
    }
}

/// Number of in-bounds pixels of the truncated window at each position.
fn window_counts(width: usize, height: usize, r: usize) -> Vec<f64> {
    let span = |i: usize, n: usize| ((i + r + 1).min(n) - i.saturating_sub(r)) as f64;
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = span(y, height);
        out.extend((0..width).map(|x| sy * span(x, width)));
    }
    out
}

/// Mean over `(2r+1)^2` windows, normalized by the in-bounds pixel count.
pub fn box_filter(img: &GrayImage, radius: usize) -> Result<GrayImage> {
    let (w, h) = img.dims();
    check_radius(w, h, radius)?;
    let src: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
    let mut sums = vec![0.0; w * h];
    box_sum(&src, w, h, radius, &mut sums);
    let counts = window_counts(w, h, radius);
    let data = sums.iter().zip(&counts).map(|(s, c)| (s / c) as f32).collect();
    Ok(GrayImage {
        width: w,
        height: h,
        data,
    })
}

/// Guided filter of a masked map.
///
/// Each window fits `input ~ a * guide + b` over its valid pixels; the output
/// at a valid pixel averages `a * guide + b` over every window that had at
/// least one valid pixel. Invalid pixels carry zero weight and stay invalid.
pub fn guided_filter(input: &ErrorMap, guide: &GrayImage, radius: usize, eps: f64) -> Result<ErrorMap> {
    let (w, h) = input.dims();
    if guide.dims() != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            actual: guide.dims(),
        });
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("eps must be > 0, got {eps}")));
    }
    check_radius(w, h, radius)?;
    // stage 1 sums (count, e, g, gg, ge) over valid pixels; stage 2 sums
    // the per-window coefficients (a, b, defined)
    let mut stats = RunningBox::<5>::new(w, h, radius);
    let mut coefs = RunningBox::<3>::new(w, h, radius);
    let mut src = vec![[0.0; 5]; w];
    let mut coef_row = vec![[0.0; 3]; w];
    let mut out = ErrorMap::new_invalid(w, h);
    for y in 0..h {
        let row = y * w..(y + 1) * w;
        for ((s, (&e, &valid)), &g) in src
            .iter_mut()
            .zip(input.data[row.clone()].iter().zip(&input.mask[row.clone()]))
            .zip(&guide.data[row])
        {
            let (e, g) = (e as f64, g as f64);
            *s = if valid { [1.0, e, g, g * g, g * e] } else { [0.0; 5] };
        }
        stats.push(&src);
        while let Some((_, sums)) = stats.pop() {
            for (c, s) in coef_row.iter_mut().zip(sums) {
                let n = s[0];
                *c = if n > 0.5 {
                    let mg = s[2] / n;
                    let me = s[1] / n;
                    let var = (s[3] / n - mg * mg).max(0.0);
                    let cov = s[4] / n - mg * me;
                    let a = cov / (var + eps);
                    [a, me - a * mg, 1.0]
                } else {
                    [0.0; 3]
                };
            }
            coefs.push(&coef_row);
            while let Some((yo, sums)) = coefs.pop() {
                let row = yo * w..(yo + 1) * w;
                for (i, s) in row.zip(sums) {
                    if input.mask[i] {
                        let g = guide.data[i] as f64;
                        out.data[i] = ((s[0] * g + s[1]) / s[2]) as f32;
                        out.mask[i] = true;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.random::<f32>())
    }

    #[test]
    fn luma_examples() {
        let g = to_gray(2, 1, &[1.0f32, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((g.get(0, 0) - 1.0).abs() < 1e-6);
        assert_eq!(g.get(1, 0), 0.0);
        let r = to_gray(1, 1, &[1.0f32, 0.0, 0.0]).unwrap();
        assert!((r.get(0, 0) - 0.299).abs() < 1e-7);
        let w8 = to_gray(1, 1, &[255u8, 255, 255]).unwrap();
        assert!((w8.get(0, 0) - 1.0).abs() < 1e-6);
        assert!(to_gray(2, 2, &[0u8; 11]).is_err());
    }

    #[test]
    fn bilinear_examples() {
        let img = GrayImage::from_vec(2, 2, vec![0.0, 1.0, 0.25, 0.75]).unwrap();
        assert_eq!(img.sample_bilinear(1.0, 1.0), Some(0.75));
        assert_eq!(img.sample_bilinear(0.0, 1.0), Some(0.25));
        assert_eq!(img.sample_bilinear(0.5, 0.0), Some(0.5));
        assert_eq!(img.sample_bilinear(-0.1, 0.0), None);
        assert_eq!(img.sample_bilinear(0.0, 1.0001), None);
        assert_eq!(img.sample_bilinear(f64::NAN, 0.0), None);
    }

    #[test]
    fn box_filter_examples() {
        let c = GrayImage::from_fn(7, 5, |_, _| 0.3);
        let out = box_filter(&c, 2).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.3).abs() < 1e-6));

        let mut impulse = GrayImage::new(5, 5);
        impulse.set(2, 2, 1.0);
        let out = box_filter(&impulse, 1).unwrap();
        assert!((out.get(2, 2) - 1.0 / 9.0).abs() < 1e-7);
        // corner window has 4 pixels
        assert!((out.get(1, 1) - 1.0 / 9.0).abs() < 1e-7);

        assert!(box_filter(&c, 0).is_err());
        assert!(box_filter(&c, 5).is_err());
    }

    fn naive_box(img: &GrayImage, r: usize) -> Vec<f64> {
        let (w, h) = img.dims();
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (mut s, mut n) = (0.0f64, 0.0);
                for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                    for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                        s += img.get(xx, yy) as f64;
                        n += 1.0;
                    }
                }
                out[y * w + x] = s / n;
            }
        }
        out
    }

    #[test]
    fn box_filter_matches_naive_window_sums() {
        for seed in 0..5 {
            let img = random_image(16, 11, seed);
            for r in 1..11 {
                let fast = box_filter(&img, r).unwrap();
                let slow = naive_box(&img, r);
                for (a, b) in fast.data().iter().zip(&slow) {
                    assert!((*a as f64 - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn guided_filter_preserves_constants() {
        let guide = random_image(12, 9, 3);
        let input = ErrorMap::from_vec(12, 9, vec![0.42; 108]).unwrap();
        let out = guided_filter(&input, &guide, 3, 1e-4).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.42).abs() < 1e-6));
    }

    #[test]
    fn guided_filter_preserves_edges_when_self_guided() {
        let guide = GrayImage::from_fn(20, 20, |x, y| {
            if x < 10 {
                0.2
            } else if y < 7 {
                0.9
            } else {
                0.5
            }
        });
        let input = ErrorMap::from_vec(20, 20, guide.data().to_vec()).unwrap();
        let out = guided_filter(&input, &guide, 3, 1e-9).unwrap();
        for (a, b) in out.data().iter().zip(guide.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn guided_filter_keeps_masks() {
        let guide = random_image(10, 10, 1);
        let mask: Vec<bool> = (0..100).map(|i| i % 3 != 0).collect();
        let data: Vec<f32> = (0..100).map(|i| (i % 7) as f32 * 0.1).collect();
        let input = ErrorMap::from_parts(10, 10, data, mask.clone()).unwrap();
        let out = guided_filter(&input, &guide, 2, 1e-3).unwrap();
        assert_eq!(out.mask(), &mask[..]);
        let all_invalid = ErrorMap::new_invalid(10, 10);
        assert_eq!(guided_filter(&all_invalid, &guide, 2, 1e-3).unwrap().valid_count(), 0);
    }

    #[test]
    fn guided_filter_rejects_bad_arguments() {
        let guide = random_image(10, 10, 1);
        let input = ErrorMap::from_vec(10, 8, vec![0.0; 80]).unwrap();
        assert!(matches!(
            guided_filter(&input, &guide, 2, 1e-3),
            Err(Error::DimensionMismatch { .. })
        ));
        let input = ErrorMap::from_vec(10, 10, vec![0.0; 100]).unwrap();
        assert!(guided_filter(&input, &guide, 2, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn guided_filter_ignores_guide_offset(seed in 0u64..1000, shift in -0.5f32..0.5) {
            let guide = random_image(12, 12, seed);
            let input = ErrorMap::from_vec(12, 12, random_image(12, 12, seed + 7).into_vec()).unwrap();
            let shifted = GrayImage::from_vec(12, 12, guide.data().iter().map(|v| v + shift).collect()).unwrap();
            let a = guided_filter(&input, &guide, 2, 1e-2).unwrap();
            let b = guided_filter(&input, &shifted, 2, 1e-2).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }

        #[test]
        fn filters_stay_finite(seed in 0u64..1000, r in 1usize..5) {
            let img = random_image(11, 9, seed);
            let boxed = box_filter(&img, r).unwrap();
            prop_assert!(boxed.data().iter().all(|v| v.is_finite() && *v >= -1e-6 && *v <= 1.0 + 1e-6));
            let input = ErrorMap::from_vec(11, 9, random_image(11, 9, seed ^ 99).into_vec()).unwrap();
            let out = guided_filter(&input, &img, r, 1e-4).unwrap();
            prop_assert!(out.data().iter().all(|v| v.is_finite()));
        }

        #[test]
        fn bilinear_is_lipschitz(seed in 0u64..1000, x in 0.0f64..8.0, y in 0.0f64..8.0, d in 0.0f64..0.9) {
            let img = random_image(10, 10, seed);
            let mut max_step = 0.0f32;
            for yy in 0..10 {
                for xx in 0..9 {
                    max_step = max_step.max((img.get(xx + 1, yy) - img.get(xx, yy)).abs());
                }
            }
            let a = img.sample_bilinear(x, y).unwrap();
            let b = img.sample_bilinear(x + d, y).unwrap();
            prop_assert!((a - b).abs() <= d as f32 * max_step + 1e-6);
        }
    }
}
