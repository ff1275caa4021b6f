//! Event-based motion deblurring with a piecewise-linear spiking intensity
//! representation.
//!
//! An event camera reports per-pixel log-intensity changes as a sparse stream
//! of (x, y, t, p) tuples while a conventional sensor integrates light over
//! the exposure window, producing a blurry frame. This crate models the latent
//! sharp intensity of every pixel as a piecewise-linear mapping from time to
//! intensity whose temporal mean is pinned to the blurry pixel value, fits the
//! mapping parameters to the events (or to sampled sharp frames) by direct
//! numerical optimization, and renders sharp video at arbitrary frame rates
//! and spatial resolutions.
//!
//! Module map:
//! - [`event`] / [`frame`]: domain types for event streams, frames, and the
//!   exposure window, plus validation, time slicing, and voxelization.
//! - [`spikerep`]: the piecewise-linear representation itself — keypoint
//!   construction from unconstrained widths, evaluation, the closed-form
//!   temporal mean, and the blur-constraint normalization constant.
//! - [`simulator`]: synthetic scenes, exposure blur, and threshold-walk event
//!   generation.
//! - [`fitter`]: recovery of the representation from a blurry frame plus
//!   events and/or sharp target frames.
//! - [`render`]: frame/video rendering and parameter-space super-resolution.
//! - [`baseline`]: event-double-integral reconstruction for comparison.
//! - [`metrics`]: MSE / PSNR / SSIM and sequence aggregation.
//! - [`io`]: binary formats for events, frames, and fields, plus the
//!   key-value run configuration.

pub mod baseline;
pub mod error;
pub mod event;
pub mod fitter;
pub mod frame;
pub mod io;
pub mod metrics;
pub mod render;
pub mod simulator;
pub mod spikerep;

pub use error::{Error, Result};
pub use event::{Event, EventHistogram, EventStream, ExposureWindow};
pub use frame::{Frame, FrameSequence};
pub use spikerep::{Field, KernelField, SpikingField, SpikingPixel};
