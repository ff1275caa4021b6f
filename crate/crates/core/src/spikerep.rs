//! The spiking representation: per-pixel piecewise-linear mappings from time
//! to intensity.
//!
//! Each pixel carries `n` linear segments over `n+1` strictly increasing
//! keypoints spanning the exposure window, plus a scalar normalization
//! constant `c` chosen so the temporal mean of the mapping equals the blurry
//! pixel value exactly. Discontinuities at interior keypoints (the "spikes")
//! model instantaneous edge-driven intensity changes; segment slopes model
//! gradual change.
//!
//! Segment membership is right-continuous: segment `i` covers
//! `[t_i, t_{i+1})` and the last segment is closed at the window end. The
//! value at an interior keypoint therefore comes from the segment to its
//! right, which makes the jump (if any) land exactly at the keypoint.

use crate::error::{Error, Result};
use crate::event::ExposureWindow;
use crate::frame::Frame;

/// Smallest admissible segment width as a fraction of the exposure length.
///
/// The normalized-exponential activation can produce widths down to ~1e-44
/// for raw inputs near +/-50, which vanish when added to keypoints of
/// magnitude T/2 in f64. Widths are floored at this fraction (and the set
/// renormalized) so cumulative keypoints stay strictly increasing.
pub const MIN_WIDTH_FRACTION: f64 = 1e-9;

/// Maps `n` unconstrained raw widths to `n+1` keypoints spanning the window.
///
/// Widths are the normalized exponential of the raw inputs scaled to sum to
/// the exposure length; keypoints are their cumulative sums from `-T/2`. The
/// final keypoint is pinned to `T/2` exactly rather than accumulated.
pub fn keypoints_from_widths(raw_widths: &[f64], window: ExposureWindow) -> Vec<f64> {
    let n = raw_widths.len();
    assert!(n >= 1, "at least one segment width is required");
    let t_len = window.length();

    let max = raw_widths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut widths: Vec<f64> = raw_widths.iter().map(|r| (r - max).exp()).collect();
    let total: f64 = widths.iter().sum();
    for w in &mut widths {
        *w *= t_len / total;
    }

    let floor = MIN_WIDTH_FRACTION * t_len;
    if widths.iter().any(|&w| w < floor) {
        for w in &mut widths {
            if *w < floor {
                *w = floor;
            }
        }
        let total: f64 = widths.iter().sum();
        for w in &mut widths {
            *w *= t_len / total;
        }
    }

    let mut keypoints = Vec::with_capacity(n + 1);
    keypoints.push(window.start());
    let mut acc = window.start();
    for w in widths.iter().take(n - 1) {
        acc += w;
        keypoints.push(acc);
    }
    keypoints.push(window.end());
    keypoints
}

/// Canonical raw widths reproducing `keypoints` through
/// [`keypoints_from_widths`]: the log of each segment length.
///
/// The normalized exponential is shift-invariant, so any representative
/// works; the log of the widths is the one with unit normalizer.
pub fn raw_widths_from_keypoints(keypoints: &[f64]) -> Vec<f64> {
    keypoints.windows(2).map(|p| (p[1] - p[0]).ln()).collect()
}

/// Index of the segment containing `t` under the right-continuous bracket
/// rule (last segment closed).
#[inline]
pub fn segment_index(keypoints: &[f64], t: f64) -> usize {
    let n = keypoints.len() - 1;
    keypoints.partition_point(|&k| k <= t).clamp(1, n) - 1
}

/// Mean over the window of the piecewise-linear part (without `c`):
/// `(1/T) sum_i [ m_i/2 (t_{i+1}^2 - t_i^2) + b_i (t_{i+1} - t_i) ]`.
///
/// Shared by [`SpikingPixel::integral_mean`] and
/// [`normalization_constant`] so the two cancel to machine precision.
pub fn piecewise_mean(slopes: &[f64], intercepts: &[f64], keypoints: &[f64], t_len: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..slopes.len() {
        let (a, b) = (keypoints[i], keypoints[i + 1]);
        acc += (b - a) * (0.5 * slopes[i] * (a + b) + intercepts[i]);
    }
    acc / t_len
}

/// The unique additive constant making the mapping's temporal mean equal the
/// blurry value: `c = B - (1/T) sum_i [ m_i/2 (t_{i+1}^2 - t_i^2) + b_i (t_{i+1} - t_i) ]`.
pub fn normalization_constant(
    slopes: &[f64],
    intercepts: &[f64],
    keypoints: &[f64],
    blur: f64,
    window: ExposureWindow,
) -> f64 {
    blur - piecewise_mean(slopes, intercepts, keypoints, window.length())
}

/// One pixel's mapping: `n+1` keypoints, `n` slopes, `n` intercepts, and the
/// normalization constant `c`. The value on segment `i` is `c + m_i t + b_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikingPixel {
    pub keypoints: Vec<f64>,
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub c: f64,
}

impl SpikingPixel {
    /// Validating constructor: checks lengths, strictly increasing keypoints,
    /// and endpoints pinned to the window.
    pub fn new(
        keypoints: Vec<f64>,
        slopes: Vec<f64>,
        intercepts: Vec<f64>,
        c: f64,
        window: ExposureWindow,
    ) -> Result<Self> {
        check_keypoints(&keypoints, window)?;
        let n = keypoints.len() - 1;
        if slopes.len() != n || intercepts.len() != n {
            return Err(Error::InvalidInput(format!(
                "expected {n} slopes and intercepts, got {} and {}",
                slopes.len(),
                intercepts.len()
            )));
        }
        Ok(SpikingPixel {
            keypoints,
            slopes,
            intercepts,
            c,
        })
    }

    pub fn constant(value: f64, window: ExposureWindow, segments: usize) -> Self {
        SpikingPixel {
            keypoints: keypoints_from_widths(&vec![0.0; segments], window),
            slopes: vec![0.0; segments],
            intercepts: vec![0.0; segments],
            c: value,
        }
    }

    pub fn segments(&self) -> usize {
        self.slopes.len()
    }

    /// Unchecked evaluation; `t` must lie within the window.
    #[inline]
    pub fn value_at(&self, t: f64) -> f64 {
        let i = segment_index(&self.keypoints, t);
        self.c + self.slopes[i] * t + self.intercepts[i]
    }

    /// Evaluates `c + m_i t + b_i` on the segment containing `t`. The result
    /// is not clamped; clamping is a render-stage concern.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let n = self.segments();
        if t < self.keypoints[0] || t > self.keypoints[n] {
            return Err(Error::TimeOutOfWindow {
                t,
                lo: self.keypoints[0],
                hi: self.keypoints[n],
            });
        }
        Ok(self.value_at(t))
    }

    /// Closed-form temporal mean of the full mapping over the window.
    pub fn integral_mean(&self) -> f64 {
        let t_len = self.keypoints[self.segments()] - self.keypoints[0];
        self.c + piecewise_mean(&self.slopes, &self.intercepts, &self.keypoints, t_len)
    }
}

fn check_keypoints(keypoints: &[f64], window: ExposureWindow) -> Result<()> {
    if keypoints.len() < 2 {
        return Err(Error::InvalidInput("need at least two keypoints".into()));
    }
    if keypoints[0] != window.start() || keypoints[keypoints.len() - 1] != window.end() {
        return Err(Error::InvalidInput(format!(
            "keypoints must span [{}, {}], got [{}, {}]",
            window.start(),
            window.end(),
            keypoints[0],
            keypoints[keypoints.len() - 1]
        )));
    }
    for pair in keypoints.windows(2) {
        if !(pair[1] > pair[0]) {
            return Err(Error::InvalidInput(format!(
                "keypoints must strictly increase ({} then {})",
                pair[0], pair[1]
            )));
        }
    }
    Ok(())
}

/// An `h x w` grid of [`SpikingPixel`] sharing one segment count and window.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikingField {
    pub height: usize,
    pub width: usize,
    pub window: ExposureWindow,
    pub segments: usize,
    pub pixels: Vec<SpikingPixel>,
}

impl SpikingField {
    pub fn new(
        height: usize,
        width: usize,
        window: ExposureWindow,
        pixels: Vec<SpikingPixel>,
    ) -> Result<Self> {
        if pixels.len() != height * width || pixels.is_empty() {
            return Err(Error::InvalidInput(format!(
                "expected {height}x{width} pixels, got {}",
                pixels.len()
            )));
        }
        let segments = pixels[0].segments();
        for p in &pixels {
            if p.segments() != segments {
                return Err(Error::InvalidInput(
                    "all pixels must share one segment count".into(),
                ));
            }
        }
        Ok(SpikingField {
            height,
            width,
            window,
            segments,
            pixels,
        })
    }

    /// A field evaluating to `value` everywhere.
    pub fn constant(
        height: usize,
        width: usize,
        window: ExposureWindow,
        segments: usize,
        value: f64,
    ) -> Self {
        let pixel = SpikingPixel::constant(value, window, segments);
        SpikingField {
            height,
            width,
            window,
            segments,
            pixels: vec![pixel; height * width],
        }
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &SpikingPixel {
        &self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut SpikingPixel {
        &mut self.pixels[y * self.width + x]
    }

    /// Largest deviation of any pixel's temporal mean from `blurry`.
    pub fn max_blur_violation(&self, blurry: &Frame) -> f64 {
        self.pixels
            .iter()
            .zip(&blurry.data)
            .map(|(p, &b)| (p.integral_mean() - b).abs())
            .fold(0.0, f64::max)
    }
}

/// One linear tap of a spatial kernel: `n` slopes and `n` intercepts over the
/// pixel's shared keypoints, with no normalization constant of its own.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTap {
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
}

impl LinearTap {
    pub fn zero(segments: usize) -> Self {
        LinearTap {
            slopes: vec![0.0; segments],
            intercepts: vec![0.0; segments],
        }
    }
}

/// One pixel of a kernel field: shared keypoints, `k*k` taps in row-major
/// offset order, and a single per-pixel normalization constant.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPixel {
    pub keypoints: Vec<f64>,
    pub taps: Vec<LinearTap>,
    pub c: f64,
}

/// Per-pixel `k x k` time-varying kernels evaluated against the blurry-image
/// neighborhood, plus one normalization constant per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelField {
    pub height: usize,
    pub width: usize,
    pub window: ExposureWindow,
    pub segments: usize,
    pub kernel_size: usize,
    pub pixels: Vec<KernelPixel>,
}

/// Row-major `k x k` neighborhood of `(x, y)` in `frame`, zero-padded at the
/// borders. Tap order matches [`KernelPixel::taps`].
pub fn neighborhood(frame: &Frame, x: usize, y: usize, kernel_size: usize) -> Vec<f64> {
    let r = (kernel_size / 2) as isize;
    let mut out = Vec::with_capacity(kernel_size * kernel_size);
    for dy in -r..=r {
        for dx in -r..=r {
            let yy = y as isize + dy;
            let xx = x as isize + dx;
            if yy >= 0 && (yy as usize) < frame.height && xx >= 0 && (xx as usize) < frame.width {
                out.push(frame.get(yy as usize, xx as usize));
            } else {
                out.push(0.0);
            }
        }
    }
    out
}

/// The constant making the temporal mean of the kernel evaluation equal the
/// blurry value: by linearity the kernel-mode mean is the inner product of
/// per-tap means with the neighborhood.
pub fn kernel_normalization_constant(
    taps: &[LinearTap],
    keypoints: &[f64],
    neighborhood: &[f64],
    blur: f64,
    window: ExposureWindow,
) -> f64 {
    let t_len = window.length();
    let mut acc = 0.0;
    for (tap, &nv) in taps.iter().zip(neighborhood) {
        acc += piecewise_mean(&tap.slopes, &tap.intercepts, keypoints, t_len) * nv;
    }
    blur - acc
}

impl KernelField {
    pub fn new(
        height: usize,
        width: usize,
        window: ExposureWindow,
        kernel_size: usize,
        pixels: Vec<KernelPixel>,
    ) -> Result<Self> {
        if kernel_size % 2 == 0 || kernel_size == 0 {
            return Err(Error::InvalidInput(format!(
                "kernel size must be odd and positive, got {kernel_size}"
            )));
        }
        if pixels.len() != height * width || pixels.is_empty() {
            return Err(Error::InvalidInput(format!(
                "expected {height}x{width} pixels, got {}",
                pixels.len()
            )));
        }
        let segments = pixels[0].taps[0].slopes.len();
        for p in &pixels {
            check_keypoints(&p.keypoints, window)?;
            if p.taps.len() != kernel_size * kernel_size {
                return Err(Error::InvalidInput("tap count must be k*k".into()));
            }
            for tap in &p.taps {
                if tap.slopes.len() != segments || tap.intercepts.len() != segments {
                    return Err(Error::InvalidInput(
                        "all taps must share one segment count".into(),
                    ));
                }
            }
        }
        Ok(KernelField {
            height,
            width,
            window,
            segments,
            kernel_size,
            pixels,
        })
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &KernelPixel {
        &self.pixels[y * self.width + x]
    }

    /// Assembles the `k x k` kernel at time `t`, takes its inner product with
    /// the zero-padded blurry neighborhood, and adds the per-pixel constant.
    pub fn eval(&self, blurry: &Frame, x: usize, y: usize, t: f64) -> Result<f64> {
        if y >= self.height || x >= self.width {
            return Err(Error::PixelOutOfBounds {
                x,
                y,
                h: self.height,
                w: self.width,
            });
        }
        self.window.check_contains(t)?;
        let nb = neighborhood(blurry, x, y, self.kernel_size);
        Ok(self.value_at(&nb, x, y, t))
    }

    /// Unchecked kernel evaluation with a precomputed neighborhood.
    #[inline]
    pub fn value_at(&self, neighborhood: &[f64], x: usize, y: usize, t: f64) -> f64 {
        let px = self.pixel(y, x);
        let i = segment_index(&px.keypoints, t);
        let mut acc = px.c;
        for (tap, &nv) in px.taps.iter().zip(neighborhood) {
            acc += (tap.slopes[i] * t + tap.intercepts[i]) * nv;
        }
        acc
    }

    /// Temporal mean of the kernel evaluation at `(x, y)` in closed form.
    pub fn integral_mean(&self, blurry: &Frame, x: usize, y: usize) -> f64 {
        let px = self.pixel(y, x);
        let nb = neighborhood(blurry, x, y, self.kernel_size);
        let t_len = self.window.length();
        let mut acc = px.c;
        for (tap, &nv) in px.taps.iter().zip(&nb) {
            acc += piecewise_mean(&tap.slopes, &tap.intercepts, &px.keypoints, t_len) * nv;
        }
        acc
    }
}

/// A fitted deblurring result: either scalar per-pixel mappings or spatial
/// kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Spiking(SpikingField),
    Kernel(KernelField),
}

impl Field {
    pub fn resolution(&self) -> (usize, usize) {
        match self {
            Field::Spiking(f) => (f.height, f.width),
            Field::Kernel(f) => (f.height, f.width),
        }
    }

    pub fn window(&self) -> ExposureWindow {
        match self {
            Field::Spiking(f) => f.window,
            Field::Kernel(f) => f.window,
        }
    }

    pub fn segments(&self) -> usize {
        match self {
            Field::Spiking(f) => f.segments,
            Field::Kernel(f) => f.segments,
        }
    }

    pub fn kernel_size(&self) -> usize {
        match self {
            Field::Spiking(_) => 1,
            Field::Kernel(f) => f.kernel_size,
        }
    }
}
