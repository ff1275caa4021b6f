//! Intensity frames and timestamped frame sequences.

use crate::error::{Error, Result};

/// An `h x w` grid of intensities with a timestamp, row-major.
///
/// Normalized frames live in `[0, 1]`; unclamped renders may exceed that
/// range, so range checking is explicit ([`Frame::is_normalized`]) rather
/// than enforced on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub t: f64,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn from_data(height: usize, width: usize, t: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "frame data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Frame {
            height,
            width,
            t,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, t: f64, value: f64) -> Self {
        Frame {
            height,
            width,
            t,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn check_same_shape(&self, other: &Frame) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(
                self.height,
                self.width,
                other.height,
                other.width,
            ))
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Copy with every value clamped to `[0, 1]`.
    pub fn clamped(&self) -> Frame {
        Frame {
            height: self.height,
            width: self.width,
            t: self.t,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }
}

/// Frames with strictly increasing timestamps and a shared resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        for pair in frames.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(Error::InvalidInput(format!(
                    "frame timestamps must strictly increase ({} then {})",
                    pair[0].t, pair[1].t
                )));
            }
            pair[0].check_same_shape(&pair[1])?;
        }
        Ok(FrameSequence { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.t).collect()
    }
}
