//! Rendering fitted fields into frames: arbitrary timestamps, optional
//! clamping, and parameter-space super-resolution.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::{Frame, FrameSequence};
use crate::spikerep::{
    keypoints_from_widths, neighborhood, normalization_constant, raw_widths_from_keypoints, Field,
    SpikingField, SpikingPixel,
};

/// What to render: timestamps (strictly increasing, inside the window), the
/// output resolution, and whether to clamp intensities to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RenderRequest {
    pub timestamps: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub clamp: bool,
}

impl RenderRequest {
    pub fn new(timestamps: Vec<f64>, height: usize, width: usize) -> Result<Self> {
        if timestamps.is_empty() {
            return Err(Error::InvalidInput("need at least one timestamp".into()));
        }
        if timestamps.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidInput(
                "render timestamps must strictly increase".into(),
            ));
        }
        Ok(RenderRequest {
            timestamps,
            height,
            width,
            clamp: true,
        })
    }

    pub fn unclamped(mut self) -> Self {
        self.clamp = false;
        self
    }
}

/// Evaluates the field at `t` over its native grid.
pub fn render_frame(field: &Field, blurry: &Frame, t: f64, clamp: bool) -> Result<Frame> {
    field.window().check_contains(t)?;
    let (h, w) = field.resolution();
    let data: Vec<f64> = match field {
        Field::Spiking(f) => f.pixels.iter().map(|p| p.value_at(t)).collect(),
        Field::Kernel(f) => {
            blurry.check_same_shape(&Frame::constant(h, w, 0.0, 0.0))?;
            let mut out = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    let nb = neighborhood(blurry, x, y, f.kernel_size);
                    out.push(f.value_at(&nb, x, y, t));
                }
            }
            out
        }
    };
    let data = if clamp {
        data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
    } else {
        data
    };
    Frame::from_data(h, w, t, data)
}

/// Maps [`render_frame`] over the requested timestamps. The request
/// resolution must match the field; upscaling goes through
/// [`render_superres`].
pub fn render_video(field: &Field, blurry: &Frame, request: &RenderRequest) -> Result<FrameSequence> {
    let (h, w) = field.resolution();
    if (request.height, request.width) != (h, w) {
        return Err(Error::ShapeMismatch(request.height, request.width, h, w));
    }
    let frames = request
        .timestamps
        .iter()
        .map(|&t| render_frame(field, blurry, t, request.clamp))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}

/// Renders a scalar field at an integer multiple of its resolution by
/// bilinear interpolation in parameter space.
///
/// Output pixel (x', y') maps to source coordinates
/// ((x'+0.5)/s - 0.5, (y'+0.5)/s - 0.5) under the half-pixel-centre
/// convention. Slopes, intercepts, and pre-activation raw widths of the four
/// neighboring pixels are interpolated; keypoints are rebuilt from the
/// interpolated widths and the normalization constant is re-solved against
/// the bilinearly interpolated blurry value, so the exposure constraint holds
/// at the interpolated coordinate. Grid-aligned coordinates copy the source
/// pixel unchanged, which makes scale 1 the identity.
pub fn render_superres(
    field: &SpikingField,
    blurry: &Frame,
    request: &RenderRequest,
) -> Result<FrameSequence> {
    let (h, w) = (field.height, field.width);
    if request.height % h != 0 || request.width % w != 0 {
        return Err(Error::InvalidInput(format!(
            "output {}x{} is not an integer multiple of {}x{}",
            request.height, request.width, h, w
        )));
    }
    let scale = request.height / h;
    if scale == 0 || request.width / w != scale {
        return Err(Error::InvalidInput(
            "horizontal and vertical scale factors must match and be >= 1".into(),
        ));
    }
    for &t in &request.timestamps {
        field.window.check_contains(t)?;
    }
    blurry.check_same_shape(&Frame::constant(h, w, 0.0, 0.0))?;

    let (oh, ow) = (request.height, request.width);
    let window = field.window;
    let n = field.segments;

    let pixels: Vec<SpikingPixel> = (0..oh * ow)
        .into_par_iter()
        .map(|idx| {
            let (oy, ox) = (idx / ow, idx % ow);
            let sx = (ox as f64 + 0.5) / scale as f64 - 0.5;
            let sy = (oy as f64 + 0.5) / scale as f64 - 0.5;

            let aligned = sx.fract() == 0.0
                && sy.fract() == 0.0
                && sx >= 0.0
                && sy >= 0.0
                && (sx as usize) < w
                && (sy as usize) < h;
            if aligned {
                return field.pixel(sy as usize, sx as usize).clone();
            }

            // Clamp the cell, not the coordinate: outside the pixel-centre
            // grid the bilinear weights extrapolate linearly from the
            // outermost pixel pair (a half-pixel band at most).
            let x0 = (sx.floor().max(0.0) as usize).min(w.saturating_sub(2));
            let y0 = (sy.floor().max(0.0) as usize).min(h.saturating_sub(2));
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = if w > 1 { sx - x0 as f64 } else { 0.0 };
            let fy = if h > 1 { sy - y0 as f64 } else { 0.0 };
            let weights = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x1, (1.0 - fy) * fx),
                (y1, x0, fy * (1.0 - fx)),
                (y1, x1, fy * fx),
            ];

            let mut raw = vec![0.0; n];
            let mut slopes = vec![0.0; n];
            let mut intercepts = vec![0.0; n];
            let mut blur = 0.0;
            for &(py, px, wgt) in &weights {
                let p = field.pixel(py, px);
                let p_raw = raw_widths_from_keypoints(&p.keypoints);
                for i in 0..n {
                    raw[i] += wgt * p_raw[i];
                    slopes[i] += wgt * p.slopes[i];
                    intercepts[i] += wgt * p.intercepts[i];
                }
                blur += wgt * blurry.get(py, px);
            }
            let keypoints = keypoints_from_widths(&raw, window);
            let c = normalization_constant(&slopes, &intercepts, &keypoints, blur, window);
            SpikingPixel {
                keypoints,
                slopes,
                intercepts,
                c,
            }
        })
        .collect();

    let frames = request
        .timestamps
        .iter()
        .map(|&t| {
            let data: Vec<f64> = pixels
                .iter()
                .map(|p| {
                    let v = p.value_at(t);
                    if request.clamp {
                        v.clamp(0.0, 1.0)
                    } else {
                        v
                    }
                })
                .collect();
            Frame::from_data(oh, ow, t, data)
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}
