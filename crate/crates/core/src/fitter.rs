//! Field recovery by direct numerical optimization.
//!
//! Every pixel is fitted independently. The normalization constant is never a
//! free parameter: it is recomputed in closed form from the current slopes,
//! intercepts, and keypoints at every loss evaluation, so the exposure
//! constraint holds exactly at every iterate.
//!
//! Supervised mode alternates (a) solving slopes and intercepts by linear
//! least squares over the samples assigned to each segment (L2) or by
//! subgradient descent (L1), with (b) coordinate-wise golden-section search
//! on interior keypoint positions. Event-only mode scores the log-intensity
//! change between consecutive event timestamps against the per-event
//! threshold, penalizes spikes at keypoints with no event support, and uses
//! backtracking gradient steps plus the same keypoint search.
//!
//! Both modes accept only improving moves, so the recorded loss sequence is
//! non-increasing, and neither uses randomness: results are bitwise
//! deterministic for identical inputs.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::event::{EventStream, ExposureWindow};
use crate::frame::{Frame, FrameSequence};
use crate::spikerep::{
    keypoints_from_widths, kernel_normalization_constant, neighborhood, normalization_constant,
    piecewise_mean, raw_widths_from_keypoints, segment_index, Field, KernelField, KernelPixel,
    LinearTap, SpikingField, SpikingPixel,
};

/// Offset used to evaluate the representation just after an event timestamp,
/// as a fraction of the exposure length.
const EVENT_BRACKET_FRACTION: f64 = 1e-4;

/// A keypoint counts as event-supported when an event lies within this
/// fraction of the exposure length; only unsupported keypoints pay the
/// spike penalty.
const SUPPORT_RADIUS_FRACTION: f64 = 0.01;

/// Golden-section iterations per keypoint coordinate (bracket shrinks by
/// ~1e-6 of its initial width).
const GOLDEN_ITERS: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    Supervised,
    EventOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L1,
    L2,
}

impl LossKind {
    #[inline]
    fn rho(self, e: f64) -> f64 {
        match self {
            LossKind::L1 => e.abs(),
            LossKind::L2 => e * e,
        }
    }

    /// Derivative of rho; the L1 subgradient uses sign(0) = 0.
    #[inline]
    fn drho(self, e: f64) -> f64 {
        match self {
            LossKind::L1 => {
                if e > 0.0 {
                    1.0
                } else if e < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::L2 => 2.0 * e,
        }
    }
}

/// Optimizer hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub mode: FitMode,
    /// Number of linear segments per pixel.
    pub segments: usize,
    /// Spatial kernel size; 1 disables kernel mode.
    pub kernel_size: usize,
    pub outer_iters: usize,
    /// Gradient / subgradient steps per outer iteration.
    pub inner_iters: usize,
    pub step_size: f64,
    pub loss: LossKind,
    /// Weight of the per-event change term (event-only mode).
    pub event_weight: f64,
    /// Weight of the spike penalty at unsupported keypoints.
    pub smoothness_weight: f64,
    /// Assumed per-event log-intensity change magnitude.
    pub event_threshold: f64,
    /// Additive floor inside the event-term logarithms. Should match the
    /// floor the events were generated with when that is known; the change
    /// identities between consecutive events are exact only then.
    pub log_epsilon: f64,
    pub seed: u64,
    /// Relative improvement below which the outer loop stops.
    pub tolerance: f64,
    /// Keep keypoints fixed at their initial positions.
    pub freeze_keypoints: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            mode: FitMode::EventOnly,
            segments: 10,
            kernel_size: 1,
            outer_iters: 30,
            inner_iters: 30,
            step_size: 0.05,
            loss: LossKind::L1,
            event_weight: 1.0,
            smoothness_weight: 0.1,
            event_threshold: 0.2,
            log_epsilon: 1e-3,
            seed: 0,
            tolerance: 1e-9,
            freeze_keypoints: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::Config("segment count must be at least 1".into()));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::Config("kernel size must be odd and positive".into()));
        }
        if self.event_weight < 0.0 || self.smoothness_weight < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::Config("step size must be positive".into()));
        }
        if !(self.event_threshold > 0.0) {
            return Err(Error::Config("event threshold must be positive".into()));
        }
        if !(self.log_epsilon > 0.0) {
            return Err(Error::Config("log epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Convergence diagnostics: the aggregate loss after every outer iteration
/// (summed over pixels), and the largest deviation of any pixel's temporal
/// mean from its blurry value seen at any iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub loss_history: Vec<f64>,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_blur_violation: f64,
}

/// Per-pixel fit outcome before assembly into a field.
struct PixelOutcome<P> {
    pixel: P,
    losses: Vec<f64>,
    iterations: usize,
    converged: bool,
    blur_violation: f64,
}

fn golden_min(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Inserts midpoints of the largest gaps until `points` has `want` interior
/// keypoints strictly inside the window.
fn fill_largest_gaps(points: &mut Vec<f64>, want: usize, window: ExposureWindow) {
    while points.len() < want {
        let mut best = (0.0f64, 0.0f64);
        let mut prev = window.start();
        for &p in points.iter().chain(std::iter::once(&window.end())) {
            if p - prev > best.0 {
                best = (p - prev, prev + 0.5 * (p - prev));
            }
            prev = p;
        }
        let pos = points.partition_point(|&p| p < best.1);
        points.insert(pos, best.1);
    }
}

/// Interior keypoints -> raw widths, with a minimum separation to keep the
/// softmax round trip well conditioned.
fn raw_widths_from_interior(interior: &[f64], window: ExposureWindow) -> Vec<f64> {
    let min_w = 1e-6 * window.length();
    let mut keypoints = Vec::with_capacity(interior.len() + 2);
    keypoints.push(window.start());
    for &p in interior {
        let lo = keypoints.last().unwrap() + min_w;
        keypoints.push(p.clamp(lo, window.end() - min_w));
    }
    keypoints.push(window.end());
    raw_widths_from_keypoints(&keypoints)
}

/// Keypoint initialization for supervised fits: the optimal segmented
/// least-squares partition of the samples into `segments` contiguous runs,
/// found by dynamic programming over per-run line-fit costs (prefix sums
/// make each cost O(1)). The shared normalization coupling is ignored here;
/// the alternating refinement handles it. Initial keypoints sit at the
/// midpoints between adjacent runs.
fn init_raw_widths_segmented(
    times: &[f64],
    values: &[f64],
    segments: usize,
    window: ExposureWindow,
) -> Vec<f64> {
    let s = times.len();
    if segments == 1 || s < segments {
        return vec![0.0; segments];
    }

    let mut pt = vec![0.0; s + 1];
    let mut pt2 = vec![0.0; s + 1];
    let mut py = vec![0.0; s + 1];
    let mut pty = vec![0.0; s + 1];
    let mut py2 = vec![0.0; s + 1];
    for i in 0..s {
        pt[i + 1] = pt[i] + times[i];
        pt2[i + 1] = pt2[i] + times[i] * times[i];
        py[i + 1] = py[i] + values[i];
        pty[i + 1] = pty[i] + times[i] * values[i];
        py2[i + 1] = py2[i] + values[i] * values[i];
    }
    // Least-squares residual of one line over samples i..=j.
    let cost = |i: usize, j: usize| -> f64 {
        let cnt = (j - i + 1) as f64;
        let st = pt[j + 1] - pt[i];
        let st2 = pt2[j + 1] - pt2[i];
        let sy = py[j + 1] - py[i];
        let sty = pty[j + 1] - pty[i];
        let sy2 = py2[j + 1] - py2[i];
        let det = cnt * st2 - st * st;
        if det.abs() < 1e-14 {
            return (sy2 - sy * sy / cnt).max(0.0);
        }
        let m = (cnt * sty - st * sy) / det;
        let b = (sy - m * st) / cnt;
        (sy2 - 2.0 * m * sty - 2.0 * b * sy + m * m * st2 + 2.0 * m * b * st + b * b * cnt)
            .max(0.0)
    };

    let mut dp = vec![f64::INFINITY; segments * s];
    let mut arg = vec![0usize; segments * s];
    for j in 0..s {
        dp[j] = cost(0, j);
    }
    for k in 1..segments {
        for j in k..s {
            let mut best = (f64::INFINITY, k);
            for i in k..=j {
                let v = dp[(k - 1) * s + i - 1] + cost(i, j);
                if v < best.0 {
                    best = (v, i);
                }
            }
            dp[k * s + j] = best.0;
            arg[k * s + j] = best.1;
        }
    }

    let mut interior = Vec::with_capacity(segments - 1);
    let mut j = s - 1;
    for k in (1..segments).rev() {
        let i = arg[k * s + j];
        interior.push(0.5 * (times[i - 1] + times[i]));
        j = i - 1;
    }
    interior.reverse();
    raw_widths_from_interior(&interior, window)
}

/// Keypoint initialization for event fits: distinct event timestamps ranked
/// by their adjacent quiet gaps, so cluster boundaries (where the intensity
/// trajectory has corners or jumps) get keypoints first. Within a cluster a
/// single linear segment can span several events, so interior events do not
/// need keypoints of their own. Remaining slots bisect the largest gaps
/// (those extra keypoints sit in quiet spans where the spike penalty keeps
/// them inert). Pixels with fewer events than segments fall back to the
/// same fill, which is uniform when there are no events at all.
fn init_raw_widths_from_events(
    event_times: &[f64],
    segments: usize,
    window: ExposureWindow,
) -> Vec<f64> {
    let want = segments - 1;
    if want == 0 {
        return vec![0.0; segments];
    }
    let mut unique: Vec<f64> = Vec::with_capacity(event_times.len());
    let min_sep = 1e-9 * window.length();
    for &t in event_times {
        if unique.last().map_or(true, |&u| t - u > min_sep) {
            unique.push(t);
        }
    }
    let margin = 1e-4 * window.length();
    unique.retain(|&t| t > window.start() + margin && t < window.end() - margin);

    let mut ranked: Vec<(f64, f64)> = unique
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let before = if i == 0 { t - window.start() } else { t - unique[i - 1] };
            let after = if i + 1 == unique.len() {
                window.end() - t
            } else {
                unique[i + 1] - t
            };
            (before.max(after), t)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let sep = 1e-5 * window.length();
    let mut picked: Vec<f64> = Vec::with_capacity(want);
    for &(_, t) in ranked.iter() {
        if picked.len() >= want {
            break;
        }
        if picked.iter().all(|&p| (p - t).abs() >= sep) {
            picked.push(t);
        }
    }
    picked.sort_by(f64::total_cmp);
    fill_largest_gaps(&mut picked, want, window);
    raw_widths_from_interior(&picked, window)
}

// ---------------------------------------------------------------------------
// Supervised objective: analytic loss and gradient for one pixel.
// ---------------------------------------------------------------------------

/// Free parameters of one pixel's mapping; `c` is implied by the blur value.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelParams {
    pub raw_widths: Vec<f64>,
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
}

/// Gradient of the supervised loss with respect to every free parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGradient {
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub raw_widths: Vec<f64>,
}

/// Supervised per-pixel loss and its analytic gradient, including the
/// dependence of the normalization constant on every parameter.
///
/// The loss is the sum over samples of `rho(clamp(prediction) - target)`.
/// Keypoint gradients treat segment membership as locally constant; the
/// remaining dependence flows through the normalization constant, whose
/// derivative with respect to an interior keypoint is the value gap at that
/// keypoint divided by the exposure length.
pub fn loss_and_gradient(
    params: &PixelParams,
    times: &[f64],
    values: &[f64],
    blur: f64,
    window: ExposureWindow,
    loss: LossKind,
) -> Result<(f64, PixelGradient)> {
    let n = params.raw_widths.len();
    if params.slopes.len() != n || params.intercepts.len() != n {
        return Err(Error::InvalidInput(
            "parameter vectors must share one segment count".into(),
        ));
    }
    if times.len() != values.len() || times.is_empty() {
        return Err(Error::InvalidInput("need matching, non-empty samples".into()));
    }
    for v in params
        .raw_widths
        .iter()
        .chain(&params.slopes)
        .chain(&params.intercepts)
    {
        if !v.is_finite() {
            return Err(Error::NonFinite("pixel parameters"));
        }
    }

    let t_len = window.length();
    let keypoints = keypoints_from_widths(&params.raw_widths, window);
    let c = normalization_constant(&params.slopes, &params.intercepts, &keypoints, blur, window);

    let mut total = 0.0;
    let mut g_m = vec![0.0; n];
    let mut g_b = vec![0.0; n];
    // Accumulated rho' * clamp-gradient: the c-path multiplier.
    let mut w_sum = 0.0;

    // Per-segment integral factors entering the normalization constant.
    let half_sq: Vec<f64> = (0..n)
        .map(|i| 0.5 * (keypoints[i + 1] * keypoints[i + 1] - keypoints[i] * keypoints[i]) / t_len)
        .collect();
    let len_frac: Vec<f64> = (0..n)
        .map(|i| (keypoints[i + 1] - keypoints[i]) / t_len)
        .collect();

    for (&t, &y) in times.iter().zip(values) {
        window.check_contains(t)?;
        let seg = segment_index(&keypoints, t);
        let v = c + params.slopes[seg] * t + params.intercepts[seg];
        let clamped = v.clamp(0.0, 1.0);
        let e = clamped - y;
        total += loss.rho(e);
        let w = loss.drho(e) * if v > 0.0 && v < 1.0 { 1.0 } else { 0.0 };
        w_sum += w;
        g_m[seg] += w * t;
        g_b[seg] += w;
    }
    // c depends on every slope and intercept: dc/dm_i = -A_i/T, dc/db_i = -D_i/T.
    for i in 0..n {
        g_m[i] -= w_sum * half_sq[i];
        g_b[i] -= w_sum * len_frac[i];
    }

    // Keypoint path: dloss/dt_k = w_sum * gap_k / T, then through the
    // normalized-exponential widths.
    let mut g_t = vec![0.0; n + 1];
    for k in 1..n {
        let t_k = keypoints[k];
        let gap = (params.slopes[k] * t_k + params.intercepts[k])
            - (params.slopes[k - 1] * t_k + params.intercepts[k - 1]);
        g_t[k] = w_sum * gap / t_len;
    }
    let max_raw = params
        .raw_widths
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = params.raw_widths.iter().map(|r| (r - max_raw).exp()).collect();
    let z: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let mut g_r = vec![0.0; n];
    let mut prefix = 0.0;
    for k in 1..n {
        prefix += probs[k - 1];
        // dt_k/dr_j = T * p_j * ([j < k] - prefix_k)
        if g_t[k] != 0.0 {
            for (j, &p_j) in probs.iter().enumerate() {
                let indicator = if j < k { 1.0 } else { 0.0 };
                g_r[j] += g_t[k] * t_len * p_j * (indicator - prefix);
            }
        }
    }

    Ok((
        total,
        PixelGradient {
            slopes: g_m,
            intercepts: g_b,
            raw_widths: g_r,
        },
    ))
}

// ---------------------------------------------------------------------------
// Supervised fitting (scalar and kernel pixels).
// ---------------------------------------------------------------------------

/// Shared per-pixel supervised machinery over a generic coefficient layout:
/// scalar pixels have one tap with neighborhood weight 1, kernel pixels have
/// k*k taps weighted by the blurry neighborhood.
struct SupervisedPixel<'a> {
    times: &'a [f64],
    values: &'a [f64],
    nb: Vec<f64>,
    blur: f64,
    window: ExposureWindow,
    config: &'a FitConfig,
}

#[derive(Clone)]
struct TapState {
    keypoints: Vec<f64>,
    /// Tap-major slopes and intercepts: tap * n + segment.
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
}

impl SupervisedPixel<'_> {
    fn taps(&self) -> usize {
        self.nb.len()
    }

    fn segments(&self) -> usize {
        self.config.segments
    }

    fn constant_of(&self, s: &TapState) -> f64 {
        let n = self.segments();
        let t_len = self.window.length();
        let mut acc = 0.0;
        for (tap, &nv) in self.nb.iter().enumerate() {
            let base = tap * n;
            acc += piecewise_mean(
                &s.slopes[base..base + n],
                &s.intercepts[base..base + n],
                &s.keypoints,
                t_len,
            ) * nv;
        }
        self.blur - acc
    }

    fn predict(&self, s: &TapState, c: f64, seg: usize, t: f64) -> f64 {
        let n = self.segments();
        let mut v = c;
        for (tap, &nv) in self.nb.iter().enumerate() {
            let idx = tap * n + seg;
            v += (s.slopes[idx] * t + s.intercepts[idx]) * nv;
        }
        v
    }

    fn loss(&self, s: &TapState) -> f64 {
        let c = self.constant_of(s);
        let mut total = 0.0;
        let mut seg = 0;
        let n = self.segments();
        for (&t, &y) in self.times.iter().zip(self.values) {
            // Sample times are sorted, so the segment pointer only advances.
            while seg + 1 < n && t >= s.keypoints[seg + 1] {
                seg += 1;
            }
            let v = self.predict(s, c, seg, t).clamp(0.0, 1.0);
            total += self.config.loss.rho(v - y);
        }
        total
    }

    /// Linear least squares over all tap coefficients with the constant
    /// eliminated through the blur constraint. Minimum-norm solution via SVD.
    fn solve_linear(&self, s: &TapState) -> Option<TapState> {
        let n = self.segments();
        let taps = self.taps();
        let cols = 2 * n * taps;
        let rows = self.times.len();
        let t_len = self.window.length();

        let half_sq: Vec<f64> = (0..n)
            .map(|i| {
                0.5 * (s.keypoints[i + 1] * s.keypoints[i + 1] - s.keypoints[i] * s.keypoints[i])
                    / t_len
            })
            .collect();
        let len_frac: Vec<f64> = (0..n)
            .map(|i| (s.keypoints[i + 1] - s.keypoints[i]) / t_len)
            .collect();

        let mut design = DMatrix::zeros(rows, cols);
        let mut rhs = DVector::zeros(rows);
        for (row, (&t, &y)) in self.times.iter().zip(self.values).enumerate() {
            let seg = segment_index(&s.keypoints, t);
            for (tap, &nv) in self.nb.iter().enumerate() {
                for i in 0..n {
                    let delta = if i == seg { 1.0 } else { 0.0 };
                    design[(row, tap * n + i)] = nv * (delta * t - half_sq[i]);
                    design[(row, taps * n + tap * n + i)] = nv * (delta - len_frac[i]);
                }
            }
            rhs[row] = y - self.blur;
        }

        let svd = design.svd(true, true);
        let sol = svd.solve(&rhs, 1e-12).ok()?;
        let mut out = s.clone();
        for tap in 0..taps {
            for i in 0..n {
                out.slopes[tap * n + i] = sol[tap * n + i];
                out.intercepts[tap * n + i] = sol[taps * n + tap * n + i];
            }
        }
        Some(out)
    }

    /// Subgradient descent on slopes and intercepts with backtracking.
    fn subgradient_steps(&self, s: &mut TapState, cur: &mut f64, step: &mut f64) {
        let n = self.segments();
        let taps = self.taps();
        let t_len = self.window.length();
        for _ in 0..self.config.inner_iters {
            let c = self.constant_of(s);
            let mut g_m = vec![0.0; taps * n];
            let mut g_b = vec![0.0; taps * n];
            let mut w_sum = 0.0;
            let mut seg = 0;
            for (&t, &y) in self.times.iter().zip(self.values) {
                while seg + 1 < n && t >= s.keypoints[seg + 1] {
                    seg += 1;
                }
                let v = self.predict(s, c, seg, t);
                let e = v.clamp(0.0, 1.0) - y;
                let w = self.config.loss.drho(e) * if v > 0.0 && v < 1.0 { 1.0 } else { 0.0 };
                w_sum += w;
                for (tap, &nv) in self.nb.iter().enumerate() {
                    g_m[tap * n + seg] += w * nv * t;
                    g_b[tap * n + seg] += w * nv;
                }
            }
            for (tap, &nv) in self.nb.iter().enumerate() {
                for i in 0..n {
                    let a_i =
                        0.5 * (s.keypoints[i + 1] * s.keypoints[i + 1]
                            - s.keypoints[i] * s.keypoints[i])
                            / t_len;
                    let d_i = (s.keypoints[i + 1] - s.keypoints[i]) / t_len;
                    g_m[tap * n + i] -= w_sum * nv * a_i;
                    g_b[tap * n + i] -= w_sum * nv * d_i;
                }
            }
            let norm: f64 = g_m
                .iter()
                .chain(&g_b)
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            if norm == 0.0 {
                break;
            }
            let mut accepted = false;
            for _ in 0..20 {
                let mut cand = s.clone();
                for (v, g) in cand.slopes.iter_mut().zip(&g_m) {
                    *v -= *step * g / norm;
                }
                for (v, g) in cand.intercepts.iter_mut().zip(&g_b) {
                    *v -= *step * g / norm;
                }
                let l = self.loss(&cand);
                if l < *cur {
                    *s = cand;
                    *cur = l;
                    *step *= 1.5;
                    accepted = true;
                    break;
                }
                *step *= 0.5;
                if *step < 1e-14 {
                    break;
                }
            }
            if !accepted {
                break;
            }
        }
    }

    fn refine_keypoints(&self, s: &mut TapState, cur: &mut f64) {
        let n = self.segments();
        let margin = 1e-7 * self.window.length();
        for k in 1..n {
            let lo = s.keypoints[k - 1] + margin;
            let hi = s.keypoints[k + 1] - margin;
            if hi <= lo {
                continue;
            }
            let mut probe = s.clone();
            let (x, fx) = golden_min(
                |t| {
                    probe.keypoints[k] = t;
                    self.loss(&probe)
                },
                lo,
                hi,
                GOLDEN_ITERS,
            );
            if fx < *cur {
                s.keypoints[k] = x;
                *cur = fx;
            }
        }
    }

    fn run(&self, init_raw: &[f64]) -> PixelOutcome<TapState> {
        let n = self.segments();
        let taps = self.taps();
        let mut state = TapState {
            keypoints: keypoints_from_widths(init_raw, self.window),
            slopes: vec![0.0; taps * n],
            intercepts: vec![0.0; taps * n],
        };
        let mut cur = self.loss(&state);
        let mut losses = Vec::with_capacity(self.config.outer_iters);
        let mut converged = false;
        let mut iterations = 0;
        let mut step = self.config.step_size;
        let mut blur_violation = 0.0f64;

        for outer in 0..self.config.outer_iters {
            iterations = outer + 1;
            match self.config.loss {
                LossKind::L2 => {
                    if let Some(cand) = self.solve_linear(&state) {
                        let l = self.loss(&cand);
                        if l < cur {
                            state = cand;
                            cur = l;
                        }
                    }
                }
                LossKind::L1 => {
                    // A least-squares proposal is still a useful L1 move when
                    // it happens to improve; the subgradient steps then polish.
                    if let Some(cand) = self.solve_linear(&state) {
                        let l = self.loss(&cand);
                        if l < cur {
                            state = cand;
                            cur = l;
                        }
                    }
                    self.subgradient_steps(&mut state, &mut cur, &mut step);
                }
            }
            if !self.config.freeze_keypoints && n > 1 {
                self.refine_keypoints(&mut state, &mut cur);
            }

            // The temporal mean with the recomputed constant must match the
            // blur at every iterate.
            let c = self.constant_of(&state);
            let t_len = self.window.length();
            let mut mean = c;
            for (tap, &nv) in self.nb.iter().enumerate() {
                let base = tap * n;
                mean += piecewise_mean(
                    &state.slopes[base..base + n],
                    &state.intercepts[base..base + n],
                    &state.keypoints,
                    t_len,
                ) * nv;
            }
            blur_violation = blur_violation.max((mean - self.blur).abs());

            losses.push(cur);
            if losses.len() >= 2 {
                let prev = losses[losses.len() - 2];
                if prev - cur <= self.config.tolerance * prev.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
        }
        if losses.is_empty() {
            losses.push(cur);
        }
        PixelOutcome {
            pixel: state,
            losses,
            iterations,
            converged,
            blur_violation,
        }
    }
}

// ---------------------------------------------------------------------------
// Event-only fitting.
// ---------------------------------------------------------------------------

struct EventPixel<'a> {
    /// (previous timestamp, event timestamp, signed threshold), both
    /// timestamps already shifted just past the jump and clamped in-window.
    pairs: Vec<(f64, f64, f64)>,
    /// Sorted raw event timestamps with polarities, for keypoint support.
    event_times: Vec<f64>,
    event_polarities: Vec<i8>,
    /// Piecewise-constant starting levels: intercept initialization taken
    /// from the cumulative-count reconstruction.
    init_intercepts: Vec<f64>,
    blur: f64,
    window: ExposureWindow,
    config: &'a FitConfig,
}

/// Event evidence near one interior keypoint.
#[derive(Clone, Copy, PartialEq)]
enum Support {
    /// No events nearby: any spike is spurious and pays |gap|.
    None,
    /// Nearby events with this net polarity sign: a spike against the sign
    /// contradicts the evidence and pays |gap|; along the sign it is free.
    Net(i8),
}

#[derive(Clone)]
struct ScalarState {
    keypoints: Vec<f64>,
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
}

impl EventPixel<'_> {
    fn constant_of(&self, s: &ScalarState) -> f64 {
        normalization_constant(&s.slopes, &s.intercepts, &s.keypoints, self.blur, self.window)
    }

    #[inline]
    fn guarded(&self, v: f64) -> f64 {
        v.max(0.0) + self.config.log_epsilon
    }

    fn support_signs(&self, keypoints: &[f64]) -> Vec<Support> {
        let radius = SUPPORT_RADIUS_FRACTION * self.window.length();
        keypoints[1..keypoints.len() - 1]
            .iter()
            .map(|&t| {
                let lo = self.event_times.partition_point(|&e| e < t - radius);
                let hi = self.event_times.partition_point(|&e| e <= t + radius);
                if lo == hi {
                    Support::None
                } else {
                    let net: i64 = self.event_polarities[lo..hi]
                        .iter()
                        .map(|&p| p as i64)
                        .sum();
                    Support::Net(net.signum() as i8)
                }
            })
            .collect()
    }


    /// Per segment, the portion of its span not covered by any event's
    /// support interval. Slope over that span is unexplained drift: events
    /// say nothing changed there.
    fn free_lengths(&self, keypoints: &[f64]) -> Vec<f64> {
        let radius = SUPPORT_RADIUS_FRACTION * self.window.length();
        let n = keypoints.len() - 1;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b) = (keypoints[i], keypoints[i + 1]);
            let mut covered = 0.0;
            let mut cursor = a;
            let start = self.event_times.partition_point(|&e| e < a - radius);
            for &t in &self.event_times[start..] {
                if t - radius > b {
                    break;
                }
                let lo = (t - radius).max(cursor);
                let hi = (t + radius).min(b);
                if hi > lo {
                    covered += hi - lo;
                    cursor = hi;
                }
            }
            out.push((b - a - covered).max(0.0));
        }
        out
    }

    fn loss(&self, s: &ScalarState) -> f64 {
        let c = self.constant_of(s);
        let value = |t: f64| {
            let seg = segment_index(&s.keypoints, t);
            c + s.slopes[seg] * t + s.intercepts[seg]
        };
        let mut total = 0.0;
        for &(prev, cur, thr) in &self.pairs {
            let r = self.guarded(value(cur)).ln() - self.guarded(value(prev)).ln() - thr;
            total += self.config.loss.rho(r);
        }
        total *= self.config.event_weight;

        if self.config.smoothness_weight > 0.0 {
            let support = self.support_signs(&s.keypoints);
            let n = s.slopes.len();
            for k in 1..n {
                let t = s.keypoints[k];
                let gap = (s.slopes[k] * t + s.intercepts[k])
                    - (s.slopes[k - 1] * t + s.intercepts[k - 1]);
                match support[k - 1] {
                    // Spurious spike: no event evidence at all.
                    Support::None => total += self.config.smoothness_weight * gap.abs(),
                    // Spike against the polarity of the nearby events.
                    Support::Net(sign) => {
                        let against = (sign as f64 * gap).min(0.0);
                        total += self.config.smoothness_weight * against * against;
                    }
                }
            }
            // Drift penalty: intensity change accumulated over event-free
            // spans, where the absence of events says nothing changed.
            for (m, free) in s.slopes.iter().zip(self.free_lengths(&s.keypoints)) {
                let drift = m * free;
                total += self.config.smoothness_weight * drift * drift;
            }
        }
        total
    }

    /// Analytic gradient of the event + spike terms w.r.t. slopes and
    /// intercepts (keypoints held fixed).
    fn gradient(&self, s: &ScalarState) -> (Vec<f64>, Vec<f64>) {
        let n = s.slopes.len();
        let t_len = self.window.length();
        let c = self.constant_of(s);
        let half_sq: Vec<f64> = (0..n)
            .map(|i| {
                0.5 * (s.keypoints[i + 1] * s.keypoints[i + 1] - s.keypoints[i] * s.keypoints[i])
                    / t_len
            })
            .collect();
        let len_frac: Vec<f64> = (0..n)
            .map(|i| (s.keypoints[i + 1] - s.keypoints[i]) / t_len)
            .collect();

        let mut g_m = vec![0.0; n];
        let mut g_b = vec![0.0; n];
        for &(prev, cur, thr) in &self.pairs {
            let seg_p = segment_index(&s.keypoints, prev);
            let seg_c = segment_index(&s.keypoints, cur);
            let v_p = c + s.slopes[seg_p] * prev + s.intercepts[seg_p];
            let v_c = c + s.slopes[seg_c] * cur + s.intercepts[seg_c];
            let (u_p, u_c) = (self.guarded(v_p), self.guarded(v_c));
            let r = u_c.ln() - u_p.ln() - thr;
            let w = self.config.event_weight * self.config.loss.drho(r);
            let d_c = if v_c > 0.0 { 1.0 / u_c } else { 0.0 };
            let d_p = if v_p > 0.0 { 1.0 / u_p } else { 0.0 };
            // Direct paths.
            g_m[seg_c] += w * d_c * cur;
            g_b[seg_c] += w * d_c;
            g_m[seg_p] -= w * d_p * prev;
            g_b[seg_p] -= w * d_p;
            // Path through the normalization constant.
            let through_c = w * (d_c - d_p);
            for i in 0..n {
                g_m[i] -= through_c * half_sq[i];
                g_b[i] -= through_c * len_frac[i];
            }
        }

        if self.config.smoothness_weight > 0.0 {
            let support = self.support_signs(&s.keypoints);
            for k in 1..n {
                let t = s.keypoints[k];
                let gap = (s.slopes[k] * t + s.intercepts[k])
                    - (s.slopes[k - 1] * t + s.intercepts[k - 1]);
                let w = match support[k - 1] {
                    Support::None => {
                        if gap == 0.0 {
                            0.0
                        } else {
                            self.config.smoothness_weight * gap.signum()
                        }
                    }
                    Support::Net(sign) => {
                        let against = (sign as f64 * gap).min(0.0);
                        2.0 * self.config.smoothness_weight * against * sign as f64
                    }
                };
                g_m[k] += w * t;
                g_b[k] += w;
                g_m[k - 1] -= w * t;
                g_b[k - 1] -= w;
            }
            for (i, free) in self.free_lengths(&s.keypoints).into_iter().enumerate() {
                g_m[i] += 2.0 * self.config.smoothness_weight * s.slopes[i] * free * free;
            }
        }
        (g_m, g_b)
    }

    /// Damped Gauss-Newton steps on the L2 event residuals. Acceptance is
    /// still judged on the full loss (including the spike term), so the
    /// outer loop stays monotone.
    fn levenberg_steps(&self, s: &mut ScalarState, cur: &mut f64) {
        let n = s.slopes.len();
        let t_len = self.window.length();
        if self.pairs.is_empty() {
            return;
        }
        let mut lambda = 1e-3;
        // Event residuals, one drift pseudo-residual per segment, and one
        // polarity-hinge pseudo-residual per interior keypoint (active set:
        // rows vanish while the gap agrees with the event polarity).
        let rows = self.pairs.len() + n + (n - 1).max(0);
        let ew = self.config.event_weight.sqrt();
        let sw = self.config.smoothness_weight.sqrt();
        for _ in 0..self.config.inner_iters {
            let c = self.constant_of(s);
            let half_sq: Vec<f64> = (0..n)
                .map(|i| {
                    0.5 * (s.keypoints[i + 1] * s.keypoints[i + 1]
                        - s.keypoints[i] * s.keypoints[i])
                        / t_len
                })
                .collect();
            let len_frac: Vec<f64> = (0..n)
                .map(|i| (s.keypoints[i + 1] - s.keypoints[i]) / t_len)
                .collect();

            let mut jac = DMatrix::zeros(rows, 2 * n);
            let mut res = DVector::zeros(rows);
            let free = self.free_lengths(&s.keypoints);
            for (i, &f) in free.iter().enumerate() {
                res[self.pairs.len() + i] = sw * s.slopes[i] * f;
                jac[(self.pairs.len() + i, i)] = sw * f;
            }
            let support = self.support_signs(&s.keypoints);
            for k in 1..n {
                if let Support::Net(sign) = support[k - 1] {
                    let t = s.keypoints[k];
                    let gap = (s.slopes[k] * t + s.intercepts[k])
                        - (s.slopes[k - 1] * t + s.intercepts[k - 1]);
                    if (sign as f64) * gap < 0.0 {
                        let row = self.pairs.len() + n + k - 1;
                        res[row] = sw * gap;
                        jac[(row, k)] = sw * t;
                        jac[(row, n + k)] = sw;
                        jac[(row, k - 1)] = -sw * t;
                        jac[(row, n + k - 1)] = -sw;
                    }
                }
            }
            for (row, &(prev, cur_t, thr)) in self.pairs.iter().enumerate() {
                let seg_p = segment_index(&s.keypoints, prev);
                let seg_c = segment_index(&s.keypoints, cur_t);
                let v_p = c + s.slopes[seg_p] * prev + s.intercepts[seg_p];
                let v_c = c + s.slopes[seg_c] * cur_t + s.intercepts[seg_c];
                let (u_p, u_c) = (self.guarded(v_p), self.guarded(v_c));
                res[row] = ew * (u_c.ln() - u_p.ln() - thr);
                let d_c = ew * if v_c > 0.0 { 1.0 / u_c } else { 0.0 };
                let d_p = ew * if v_p > 0.0 { 1.0 / u_p } else { 0.0 };
                for i in 0..n {
                    let dv_c_m = if i == seg_c { cur_t } else { 0.0 } - half_sq[i];
                    let dv_p_m = if i == seg_p { prev } else { 0.0 } - half_sq[i];
                    jac[(row, i)] = d_c * dv_c_m - d_p * dv_p_m;
                    let dv_c_b = if i == seg_c { 1.0 } else { 0.0 } - len_frac[i];
                    let dv_p_b = if i == seg_p { 1.0 } else { 0.0 } - len_frac[i];
                    jac[(row, n + i)] = d_c * dv_c_b - d_p * dv_p_b;
                }
            }

            let jtj = jac.transpose() * &jac;
            let jtr = jac.transpose() * &res;
            let mut improved = false;
            for _ in 0..8 {
                let mut damped = jtj.clone();
                for i in 0..2 * n {
                    damped[(i, i)] += lambda * (jtj[(i, i)] + 1e-9);
                }
                let Some(chol) = damped.cholesky() else {
                    lambda *= 4.0;
                    continue;
                };
                let delta = chol.solve(&jtr);
                let mut cand = s.clone();
                for i in 0..n {
                    cand.slopes[i] -= delta[i];
                    cand.intercepts[i] -= delta[n + i];
                }
                let l = self.loss(&cand);
                if l < *cur {
                    *s = cand;
                    *cur = l;
                    lambda = (lambda * 0.5).max(1e-12);
                    improved = true;
                    break;
                }
                lambda *= 4.0;
                if lambda > 1e12 {
                    break;
                }
            }
            if !improved {
                break;
            }
        }
    }

    fn gradient_steps(&self, s: &mut ScalarState, cur: &mut f64, step: &mut f64) {
        for _ in 0..self.config.inner_iters {
            let (g_m, g_b) = self.gradient(s);
            let norm: f64 = g_m
                .iter()
                .chain(&g_b)
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            if norm == 0.0 {
                break;
            }
            let mut accepted = false;
            for _ in 0..20 {
                let mut cand = s.clone();
                for (v, g) in cand.slopes.iter_mut().zip(&g_m) {
                    *v -= *step * g / norm;
                }
                for (v, g) in cand.intercepts.iter_mut().zip(&g_b) {
                    *v -= *step * g / norm;
                }
                let l = self.loss(&cand);
                if l < *cur {
                    *s = cand;
                    *cur = l;
                    *step *= 1.5;
                    accepted = true;
                    break;
                }
                *step *= 0.5;
                if *step < 1e-14 {
                    break;
                }
            }
            if !accepted {
                break;
            }
        }
    }

    fn run(&self, init_raw: &[f64]) -> PixelOutcome<ScalarState> {
        let n = self.config.segments;
        let mut state = ScalarState {
            keypoints: keypoints_from_widths(init_raw, self.window),
            slopes: vec![0.0; n],
            intercepts: self.init_intercepts.clone(),
        };
        let mut cur = self.loss(&state);

        // A flat start is sometimes better than the count-based one.
        let flat = ScalarState {
            keypoints: state.keypoints.clone(),
            slopes: vec![0.0; n],
            intercepts: vec![0.0; n],
        };
        let flat_loss = self.loss(&flat);
        if flat_loss < cur {
            state = flat;
            cur = flat_loss;
        }

        let mut losses = Vec::with_capacity(self.config.outer_iters);
        let mut converged = self.pairs.is_empty();
        let mut iterations = 0;
        let mut step = self.config.step_size;
        let mut blur_violation = 0.0f64;

        if !converged {
            for outer in 0..self.config.outer_iters {
                iterations = outer + 1;
                match self.config.loss {
                    LossKind::L2 => self.levenberg_steps(&mut state, &mut cur),
                    LossKind::L1 => self.gradient_steps(&mut state, &mut cur, &mut step),
                }
                // Keypoints stay at their event-derived positions: the event
                // timestamps are the best timing information available, and
                // a position search on the event objective can strand an
                // event's anchor inside a segment it then cannot satisfy.
                let mean = self.constant_of(&state)
                    + piecewise_mean(
                        &state.slopes,
                        &state.intercepts,
                        &state.keypoints,
                        self.window.length(),
                    );
                blur_violation = blur_violation.max((mean - self.blur).abs());
                losses.push(cur);
                if losses.len() >= 2 {
                    let prev = losses[losses.len() - 2];
                    if prev - cur <= self.config.tolerance * prev.abs().max(1.0) {
                        converged = true;
                        break;
                    }
                }
            }
        }
        if losses.is_empty() {
            losses.push(cur);
        }
        PixelOutcome {
            pixel: state,
            losses,
            iterations,
            converged,
            blur_violation,
        }
    }
}

// ---------------------------------------------------------------------------
// Top-level fits.
// ---------------------------------------------------------------------------

fn aggregate_outcomes<P>(
    outcomes: &[PixelOutcome<P>],
    outer_iters: usize,
) -> (Vec<f64>, usize, bool, f64) {
    let mut history = vec![0.0; outcomes.iter().map(|o| o.losses.len()).max().unwrap_or(1)];
    for o in outcomes {
        for (i, slot) in history.iter_mut().enumerate() {
            let v = if i < o.losses.len() {
                o.losses[i]
            } else {
                *o.losses.last().unwrap()
            };
            *slot += v;
        }
    }
    let iterations = outcomes.iter().map(|o| o.iterations).max().unwrap_or(0);
    let converged =
        outcomes.iter().all(|o| o.converged) || iterations < outer_iters;
    let violation = outcomes
        .iter()
        .map(|o| o.blur_violation)
        .fold(0.0, f64::max);
    (history, iterations, converged, violation)
}

fn check_supervised_inputs(
    blurry: &Frame,
    targets: &FrameSequence,
    window: ExposureWindow,
) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::InvalidInput("need at least one target frame".into()));
    }
    for f in targets.frames() {
        if f.height != blurry.height || f.width != blurry.width {
            return Err(Error::ShapeMismatch(
                blurry.height,
                blurry.width,
                f.height,
                f.width,
            ));
        }
        window.check_contains(f.t)?;
        if f.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("target frame"));
        }
    }
    if blurry.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("blurry frame"));
    }
    Ok(())
}

/// Fits a field to sampled sharp frames. With `kernel_size == 1` the result
/// is a scalar [`SpikingField`]; otherwise a [`KernelField`].
pub fn fit_supervised(
    blurry: &Frame,
    targets: &FrameSequence,
    window: ExposureWindow,
    config: &FitConfig,
) -> Result<(Field, FitReport)> {
    fit_supervised_seeded(blurry, targets, window, config, None)
}

/// [`fit_supervised`] with optional initial keypoints taken from `init`
/// (required when `freeze_keypoints` should hold them at known positions).
pub fn fit_supervised_seeded(
    blurry: &Frame,
    targets: &FrameSequence,
    window: ExposureWindow,
    config: &FitConfig,
    init: Option<&SpikingField>,
) -> Result<(Field, FitReport)> {
    config.validate()?;
    check_supervised_inputs(blurry, targets, window)?;
    if let Some(f) = init {
        if f.height != blurry.height || f.width != blurry.width {
            return Err(Error::ShapeMismatch(
                blurry.height,
                blurry.width,
                f.height,
                f.width,
            ));
        }
        if f.segments != config.segments {
            return Err(Error::InvalidInput(
                "initial field segment count differs from the configuration".into(),
            ));
        }
    }

    let (h, w) = (blurry.height, blurry.width);
    let times: Vec<f64> = targets.timestamps();
    let kernel = config.kernel_size;

    let outcomes: Vec<PixelOutcome<TapState>> = (0..h * w)
        .into_par_iter()
        .map(|idx| {
            let (y, x) = (idx / w, idx % w);
            let values: Vec<f64> = targets.frames().iter().map(|f| f.data[idx]).collect();
            let nb = if kernel == 1 {
                vec![1.0]
            } else {
                neighborhood(blurry, x, y, kernel)
            };
            let problem = SupervisedPixel {
                times: &times,
                values: &values,
                nb,
                blur: blurry.data[idx],
                window,
                config,
            };
            let init_raw = match init {
                Some(f) => raw_widths_from_keypoints(&f.pixels[idx].keypoints),
                None => init_raw_widths_segmented(&times, &values, config.segments, window),
            };
            problem.run(&init_raw)
        })
        .collect();

    let (history, iterations, converged, violation) =
        aggregate_outcomes(&outcomes, config.outer_iters);
    let report = FitReport {
        final_loss: *history.last().unwrap(),
        loss_history: history,
        iterations,
        converged,
        max_blur_violation: violation,
    };

    let n = config.segments;
    if kernel == 1 {
        let pixels: Vec<SpikingPixel> = outcomes
            .iter()
            .zip(&blurry.data)
            .map(|(o, &b)| {
                let s = &o.pixel;
                let c = normalization_constant(&s.slopes, &s.intercepts, &s.keypoints, b, window);
                SpikingPixel {
                    keypoints: s.keypoints.clone(),
                    slopes: s.slopes.clone(),
                    intercepts: s.intercepts.clone(),
                    c,
                }
            })
            .collect();
        Ok((
            Field::Spiking(SpikingField::new(h, w, window, pixels)?),
            report,
        ))
    } else {
        let pixels: Vec<KernelPixel> = outcomes
            .iter()
            .enumerate()
            .map(|(idx, o)| {
                let (y, x) = (idx / w, idx % w);
                let s = &o.pixel;
                let taps: Vec<LinearTap> = (0..kernel * kernel)
                    .map(|tap| LinearTap {
                        slopes: s.slopes[tap * n..(tap + 1) * n].to_vec(),
                        intercepts: s.intercepts[tap * n..(tap + 1) * n].to_vec(),
                    })
                    .collect();
                let nb = neighborhood(blurry, x, y, kernel);
                let c = kernel_normalization_constant(
                    &taps,
                    &s.keypoints,
                    &nb,
                    blurry.data[idx],
                    window,
                );
                KernelPixel {
                    keypoints: s.keypoints.clone(),
                    taps,
                    c,
                }
            })
            .collect();
        Ok((
            Field::Kernel(KernelField::new(h, w, window, kernel, pixels)?),
            report,
        ))
    }
}

/// Fits a scalar field to the blurry image and its events alone.
///
/// The event term scores the representation's log-intensity change between
/// consecutive event timestamps (shifted just past each jump) against the
/// signed per-event threshold; the spike term penalizes gaps at keypoints
/// with no nearby event. Kernel mode is not supported here.
pub fn fit_event_only(
    blurry: &Frame,
    events: &EventStream,
    config: &FitConfig,
) -> Result<(SpikingField, FitReport)> {
    config.validate()?;
    if config.kernel_size != 1 {
        return Err(Error::Config(
            "event-only fitting supports only kernel size 1".into(),
        ));
    }
    if blurry.height != events.height || blurry.width != events.width {
        return Err(Error::ShapeMismatch(
            blurry.height,
            blurry.width,
            events.height,
            events.width,
        ));
    }
    if blurry.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("blurry frame"));
    }
    let report = crate::event::validate_stream(events);
    if !report.is_clean() {
        return Err(Error::InvalidInput(format!(
            "event stream violates invariants: {}",
            report.violations[0]
        )));
    }

    let window = events.window;
    let (h, w) = (blurry.height, blurry.width);
    let mut per_pixel: Vec<Vec<(f64, i8)>> = vec![Vec::new(); h * w];
    for e in &events.events {
        per_pixel[e.y as usize * w + e.x as usize].push((e.t, e.p));
    }

    let delta = EVENT_BRACKET_FRACTION * window.length();
    let c_thr = config.event_threshold;

    let outcomes: Vec<PixelOutcome<ScalarState>> = (0..h * w)
        .into_par_iter()
        .map(|idx| {
            let evs = &per_pixel[idx];
            let blur = blurry.data[idx];
            let shift = |t: f64| (t + delta).min(window.end());

            let mut pairs = Vec::with_capacity(evs.len());
            let mut prev = window.start();
            for &(t, p) in evs {
                let thr = if p > 0 { c_thr } else { -c_thr };
                pairs.push((prev, shift(t), thr));
                prev = shift(t);
            }
            let event_times: Vec<f64> = evs.iter().map(|&(t, _)| t).collect();
            let event_polarities: Vec<i8> = evs.iter().map(|&(_, p)| p).collect();

            // Count-based starting intercepts: levels of the cumulative
            // reconstruction at segment midpoints, rescaled to the blur.
            let init_raw = init_raw_widths_from_events(&event_times, config.segments, window);
            let keypoints = keypoints_from_widths(&init_raw, window);
            let init_intercepts =
                count_based_levels(evs, &keypoints, c_thr, blur, window);

            let problem = EventPixel {
                pairs,
                event_times,
                event_polarities,
                init_intercepts,
                blur,
                window,
                config,
            };
            problem.run(&init_raw)
        })
        .collect();

    let (history, iterations, converged, violation) =
        aggregate_outcomes(&outcomes, config.outer_iters);
    let report = FitReport {
        final_loss: *history.last().unwrap(),
        loss_history: history,
        iterations,
        converged,
        max_blur_violation: violation,
    };

    let pixels: Vec<SpikingPixel> = outcomes
        .iter()
        .zip(&blurry.data)
        .map(|(o, &b)| {
            let s = &o.pixel;
            let c = normalization_constant(&s.slopes, &s.intercepts, &s.keypoints, b, window);
            SpikingPixel {
                keypoints: s.keypoints.clone(),
                slopes: s.slopes.clone(),
                intercepts: s.intercepts.clone(),
                c,
            }
        })
        .collect();
    Ok((SpikingField::new(h, w, window, pixels)?, report))
}

/// Levels of the piecewise-constant cumulative-count curve at segment
/// midpoints, scaled so its temporal mean equals the blur; used to start
/// the event-only optimizer near a sensible amplitude.
fn count_based_levels(
    events: &[(f64, i8)],
    keypoints: &[f64],
    c_thr: f64,
    blur: f64,
    window: ExposureWindow,
) -> Vec<f64> {
    let n = keypoints.len() - 1;
    if events.is_empty() {
        return vec![0.0; n];
    }
    let mut bounds = vec![window.start()];
    let mut levels = vec![0i64];
    let mut count = 0i64;
    for &(t, p) in events {
        count += p as i64;
        bounds.push(t);
        levels.push(count);
    }
    bounds.push(window.end());

    let mut integral = 0.0;
    for (j, &level) in levels.iter().enumerate() {
        let len = bounds[j + 1] - bounds[j];
        if len > 0.0 {
            integral += len * (c_thr * level as f64).exp();
        }
    }
    let base = if integral > 0.0 {
        blur * window.length() / integral
    } else {
        blur
    };

    (0..n)
        .map(|i| {
            let mid = 0.5 * (keypoints[i] + keypoints[i + 1]);
            let piece = bounds[1..bounds.len() - 1].partition_point(|&b| b <= mid);
            base * (c_thr * levels[piece] as f64).exp()
        })
        .collect()
}
