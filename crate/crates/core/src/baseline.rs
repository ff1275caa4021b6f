//! Event-double-integral reconstruction: the comparison baseline that
//! assumes every event corresponds to the same log-intensity change.
//!
//! Per pixel, the cumulative signed event count `E(t)` is piecewise constant
//! between event timestamps, so the latent intensity is
//! `L(t) = L(0) exp(c_thr E(t))` and the starting level `L(0)` follows from
//! the exposure constraint: `L(0) = B T / integral of exp(c_thr E(s)) ds`,
//! with the integral computed exactly over the constant pieces.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::event::EventStream;
use crate::frame::{Frame, FrameSequence};

/// Reconstructs frames at `timestamps` from the blurry image and the event
/// stream, assuming a single per-event log-intensity change of magnitude
/// `c_thr` for both polarities. Outputs are clamped to [0, 1].
pub fn edi_reconstruct(
    blurry: &Frame,
    events: &EventStream,
    c_thr: f64,
    timestamps: &[f64],
) -> Result<FrameSequence> {
    if !(c_thr.is_finite() && c_thr > 0.0) {
        return Err(Error::InvalidInput(format!(
            "per-event threshold must be positive, got {c_thr}"
        )));
    }
    if blurry.height != events.height || blurry.width != events.width {
        return Err(Error::ShapeMismatch(
            blurry.height,
            blurry.width,
            events.height,
            events.width,
        ));
    }
    let mut sorted = timestamps.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidInput(
            "render timestamps must be distinct".into(),
        ));
    }
    for &t in &sorted {
        events.window.check_contains(t)?;
    }

    let (h, w) = (blurry.height, blurry.width);
    let t_lo = events.window.start();
    let t_hi = events.window.end();

    // Per-pixel event lists in time order (the stream is already sorted).
    let mut per_pixel: Vec<Vec<(f64, i8)>> = vec![Vec::new(); h * w];
    for e in &events.events {
        per_pixel[e.y as usize * w + e.x as usize].push((e.t, e.p));
    }

    let pixel_curves: Vec<Vec<f64>> = per_pixel
        .par_iter()
        .enumerate()
        .map(|(idx, evs)| {
            let blur = blurry.data[idx];
            // Piece boundaries and the cumulative count on each piece.
            // Piece j spans [bound[j], bound[j+1]) with count level[j].
            let mut bounds = Vec::with_capacity(evs.len() + 2);
            let mut levels = Vec::with_capacity(evs.len() + 1);
            bounds.push(t_lo);
            let mut count = 0i64;
            levels.push(count);
            for &(t, p) in evs {
                count += p as i64;
                bounds.push(t);
                levels.push(count);
            }
            bounds.push(t_hi);

            let mut integral = 0.0;
            for j in 0..levels.len() {
                let len = bounds[j + 1] - bounds[j];
                if len > 0.0 {
                    integral += len * (c_thr * levels[j] as f64).exp();
                }
            }
            let base = if integral > 0.0 {
                blur * (t_hi - t_lo) / integral
            } else {
                blur
            };

            sorted
                .iter()
                .map(|&t| {
                    // E(t) counts events with timestamp <= t.
                    let piece = bounds[1..bounds.len() - 1].partition_point(|&b| b <= t);
                    (base * (c_thr * levels[piece] as f64).exp()).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();

    let frames = sorted
        .iter()
        .enumerate()
        .map(|(fi, &t)| {
            let data = pixel_curves.iter().map(|curve| curve[fi]).collect();
            Frame::from_data(h, w, t, data)
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}
