//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("exposure length must be positive and finite, got {0}")]
    InvalidExposure(f64),

    #[error("time {t} outside exposure window [{lo}, {hi}]")]
    TimeOutOfWindow { t: f64, lo: f64, hi: f64 },

    #[error("pixel ({x}, {y}) outside {w}x{h} grid")]
    PixelOutOfBounds { x: usize, y: usize, h: usize, w: usize },

    #[error("resolution mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
