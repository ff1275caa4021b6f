//! Image quality metrics on the [0, 1] intensity scale: MSE, PSNR, and
//! single-scale SSIM, plus per-sequence aggregation and the CSV report
//! emitted by the command-line `eval` subcommand.

use crate::error::{Error, Result};
use crate::frame::{Frame, FrameSequence};

/// SSIM window size (11x11 Gaussian, sigma 1.5) and stabilizers for unit
/// dynamic range: C1 = (K1 L)^2, C2 = (K2 L)^2 with K1 = 0.01, K2 = 0.03.
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean squared difference over all pixels.
pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    a.check_same_shape(b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// Peak signal-to-noise ratio with peak 1.0, in decibels. Identical frames
/// give `f64::INFINITY`.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(-10.0 * m.log10())
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut total = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        total += *v;
    }
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Separable valid-mode convolution with the Gaussian window: the output has
/// `(h - 10) x (w - 10)` entries, one per fully interior window position.
fn window_means(data: &[f64], h: usize, w: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ww = w - SSIM_WINDOW + 1;
    let wh = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; h * ww];
    for y in 0..h {
        for x in 0..ww {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * data[y * w + x + k];
            }
            horiz[y * ww + x] = acc;
        }
    }
    let mut out = vec![0.0; wh * ww];
    for y in 0..wh {
        for x in 0..ww {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * horiz[(y + k) * ww + x];
            }
            out[y * ww + x] = acc;
        }
    }
    out
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), averaged
/// over valid (non-padded) window positions.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    a.check_same_shape(b)?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "ssim needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.height, a.width
        )));
    }
    let kernel = gaussian_window();
    let (h, w) = (a.height, a.width);
    let aa: Vec<f64> = a.data.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.data.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();

    let mu_a = window_means(&a.data, h, w, &kernel);
    let mu_b = window_means(&b.data, h, w, &kernel);
    let mu_aa = window_means(&aa, h, w, &kernel);
    let mu_bb = window_means(&bb, h, w, &kernel);
    let mu_ab = window_means(&ab, h, w, &kernel);

    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = mu_aa[i] - ma * ma;
        let var_b = mu_bb[i] - mb * mb;
        let cov = mu_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

/// Metrics for one frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub index: usize,
    pub t: f64,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-frame metrics plus their unweighted means.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMetrics {
    pub per_frame: Vec<FrameMetrics>,
    pub mean_mse: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Compares two co-timed sequences frame by frame.
///
/// Timestamps must agree to within 1e-9 of the sequence's time scale
/// (the larger of 1 and the largest timestamp magnitude).
pub fn sequence_metrics(a: &FrameSequence, b: &FrameSequence) -> Result<SequenceMetrics> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "sequence length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("cannot compare empty sequences".into()));
    }
    let scale = a
        .frames()
        .iter()
        .map(|f| f.t.abs())
        .fold(1.0f64, f64::max);
    let mut per_frame = Vec::with_capacity(a.len());
    for (i, (fa, fb)) in a.frames().iter().zip(b.frames()).enumerate() {
        if (fa.t - fb.t).abs() > 1e-9 * scale {
            return Err(Error::InvalidInput(format!(
                "frame {i} timestamps differ: {} vs {}",
                fa.t, fb.t
            )));
        }
        per_frame.push(FrameMetrics {
            index: i,
            t: fa.t,
            mse: mse(fa, fb)?,
            psnr: psnr(fa, fb)?,
            ssim: ssim(fa, fb)?,
        });
    }
    let n = per_frame.len() as f64;
    Ok(SequenceMetrics {
        mean_mse: per_frame.iter().map(|m| m.mse).sum::<f64>() / n,
        mean_psnr: per_frame.iter().map(|m| m.psnr).sum::<f64>() / n,
        mean_ssim: per_frame.iter().map(|m| m.ssim).sum::<f64>() / n,
        per_frame,
    })
}

/// Writes the metrics table in the documented comma-separated form: one
/// `frame_index, t, mse, psnr, ssim` row per frame and a final `mean` row.
pub fn write_report<W: std::io::Write>(out: &mut W, metrics: &SequenceMetrics) -> Result<()> {
    for m in &metrics.per_frame {
        writeln!(out, "{},{},{},{},{}", m.index, m.t, m.mse, m.psnr, m.ssim)?;
    }
    writeln!(
        out,
        "mean,,{},{},{}",
        metrics.mean_mse, metrics.mean_psnr, metrics.mean_ssim
    )?;
    Ok(())
}
