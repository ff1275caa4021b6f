//! Shared helpers for integration tests: independent oracles and random
//! instance generators. Everything here checks the library from the outside,
//! through its public interface only.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use spikedeblur::event::ExposureWindow;
use spikedeblur::frame::Frame;
use spikedeblur::spikerep::{keypoints_from_widths, normalization_constant, SpikingField, SpikingPixel};

pub fn window(t: f64) -> ExposureWindow {
    ExposureWindow::new(t).unwrap()
}

/// Trapezoid quadrature of the pixel's mapping with samples placed segment
/// by segment, so the rule carries no discretization error beyond roundoff
/// for piecewise-linear integrands.
///
/// Independent of the closed-form mean: it sums pointwise evaluations of the
/// segment's line, and that evaluation is cross-checked against the public
/// `value_at` path at interior points of every segment.
pub fn quadrature_mean(pixel: &SpikingPixel, total_samples: usize) -> f64 {
    let n = pixel.segments();
    let t_len = pixel.keypoints[n] - pixel.keypoints[0];
    let mut acc = 0.0;
    for i in 0..n {
        let (a, b) = (pixel.keypoints[i], pixel.keypoints[i + 1]);
        let len = b - a;
        let samples = ((total_samples as f64 * len / t_len) as usize).max(2);
        let h = len / (samples - 1) as f64;
        let m = pixel.slopes[i];
        let offset = pixel.intercepts[i] + pixel.c;
        for frac in [0.3, 0.6] {
            let t = a + frac * len;
            assert!(
                (pixel.value_at(t) - (m * t + offset)).abs() <= 1e-12,
                "direct sample disagrees with the evaluation path"
            );
        }
        let mut seg_sum = 0.0;
        for j in 0..samples {
            seg_sum += m * (a + j as f64 * h) + offset;
        }
        seg_sum -= 0.5 * ((m * a + offset) + (m * (a + (samples - 1) as f64 * h) + offset));
        acc += seg_sum * h;
    }
    acc / t_len
}

/// Random pixel with the normalization constant solved from a random blur
/// value. Returns the pixel and that blur.
pub fn random_pixel(rng: &mut ChaCha8Rng, n: usize, win: ExposureWindow) -> (SpikingPixel, f64) {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let keypoints = keypoints_from_widths(&raw, win);
    let slopes: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let intercepts: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let blur = rng.random_range(0.0..1.0);
    let c = normalization_constant(&slopes, &intercepts, &keypoints, blur, win);
    (
        SpikingPixel {
            keypoints,
            slopes,
            intercepts,
            c,
        },
        blur,
    )
}

/// Random field whose mappings stay inside [lo, hi]: each segment is built
/// from endpoint values drawn in that range, so playback needs no clamping
/// and the closed-form blur is exact ground truth.
pub fn random_renderable_field(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    n: usize,
    win: ExposureWindow,
) -> SpikingField {
    let pixels = (0..h * w)
        .map(|_| {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-0.7..0.7)).collect();
            let keypoints = keypoints_from_widths(&raw, win);
            let mut slopes = Vec::with_capacity(n);
            let mut intercepts = Vec::with_capacity(n);
            for i in 0..n {
                let a = rng.random_range(0.1..0.9);
                let b = rng.random_range(0.1..0.9);
                let m = (b - a) / (keypoints[i + 1] - keypoints[i]);
                slopes.push(m);
                intercepts.push(a - m * keypoints[i]);
            }
            SpikingPixel {
                keypoints,
                slopes,
                intercepts,
                c: 0.0,
            }
        })
        .collect();
    SpikingField::new(h, w, win, pixels).unwrap()
}

/// Closed-form exposure blur of a field built by [`random_renderable_field`].
pub fn field_blur(field: &SpikingField) -> Frame {
    Frame::from_data(
        field.height,
        field.width,
        0.0,
        field.pixels.iter().map(|p| p.integral_mean()).collect(),
    )
    .unwrap()
}

fn catmull_rom(p0: f64, p1: f64, p2: f64, p3: f64, t: f64) -> f64 {
    let a = -0.5 * p0 + 1.5 * p1 - 1.5 * p2 + 0.5 * p3;
    let b = p0 - 2.5 * p1 + 2.0 * p2 - 0.5 * p3;
    let c = -0.5 * p0 + 0.5 * p2;
    ((a * t + b) * t + c) * t + p1
}

/// Bicubic (Catmull-Rom) upscaling with clamp-to-edge padding and the
/// half-pixel-centre coordinate convention; the reference upscaler the
/// parameter-space path is compared against.
pub fn bicubic_upscale(frame: &Frame, scale: usize) -> Frame {
    let (h, w) = (frame.height, frame.width);
    let (oh, ow) = (h * scale, w * scale);
    let sample = |y: isize, x: isize| -> f64 {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        frame.get(yy, xx)
    };
    let mut data = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let sy = (oy as f64 + 0.5) / scale as f64 - 0.5;
        let y0 = sy.floor() as isize;
        let fy = sy - y0 as f64;
        for ox in 0..ow {
            let sx = (ox as f64 + 0.5) / scale as f64 - 0.5;
            let x0 = sx.floor() as isize;
            let fx = sx - x0 as f64;
            let mut rows = [0.0; 4];
            for (r, row) in rows.iter_mut().enumerate() {
                let y = y0 - 1 + r as isize;
                *row = catmull_rom(
                    sample(y, x0 - 1),
                    sample(y, x0),
                    sample(y, x0 + 1),
                    sample(y, x0 + 2),
                    fx,
                );
            }
            data.push(catmull_rom(rows[0], rows[1], rows[2], rows[3], fy).clamp(0.0, 1.0));
        }
    }
    Frame::from_data(oh, ow, frame.t, data).unwrap()
}

/// Least-squares polynomial fit of the given degree, evaluated back at the
/// sample times: the continuous-parameterization oracle. Times are rescaled
/// to [-1, 1] for conditioning.
pub fn polynomial_fit_predictions(times: &[f64], values: &[f64], degree: usize) -> Vec<f64> {
    let lo = times.first().copied().unwrap();
    let hi = times.last().copied().unwrap();
    let scale = |t: f64| 2.0 * (t - lo) / (hi - lo) - 1.0;
    let rows = times.len();
    let cols = degree + 1;
    let design = DMatrix::from_fn(rows, cols, |r, c| scale(times[r]).powi(c as i32));
    let rhs = DVector::from_iterator(rows, values.iter().copied());
    let coeffs = design
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .expect("polynomial least squares");
    (design * coeffs).iter().copied().collect()
}
