//! Bit-exact serialization: event streams ("SEVT"), raw float frames
//! ("SFRM"), fitted fields ("SFLD"), 16-bit binary PGM, and the flat
//! key = value run configuration.
//!
//! All multi-byte integers and floats are little-endian, except PGM samples
//! which are big-endian per the PNM convention.
//!
//! Layouts:
//! - SEVT: magic "SEVT", version u16 = 1, width u16, height u16, exposure
//!   f64, count u64, then per event x u16, y u16, t f64, p i8 (26-byte
//!   header, 13 bytes per event).
//! - SFRM: magic "SFRM", version u16 = 1, width u16, height u16, t f64,
//!   then h*w f32 row-major (18-byte header).
//! - SFLD: magic "SFLD", version u16 = 1, h u16, w u16, n u16, k u16
//!   (1 = scalar field), exposure f64, then per pixel: n+1 keypoints f64,
//!   per tap n slopes f64 + n intercepts f64, and c f64 (22-byte header).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::event::{validate_stream, Event, EventStream, ExposureWindow};
use crate::fitter::{FitConfig, FitMode, LossKind};
use crate::frame::Frame;
use crate::simulator::{SceneKind, SceneSpec, ThresholdPair};
use crate::spikerep::{Field, KernelField, KernelPixel, LinearTap, SpikingField, SpikingPixel};

const EVENTS_MAGIC: &[u8; 4] = b"SEVT";
const FRAME_MAGIC: &[u8; 4] = b"SFRM";
const FIELD_MAGIC: &[u8; 4] = b"SFLD";
const FORMAT_VERSION: u16 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated file: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::Format(format!(
                "bad magic: expected {:?}, got {:?}",
                String::from_utf8_lossy(expected),
                String::from_utf8_lossy(got)
            )));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u16()?;
        if v != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {v}")));
        }
        Ok(())
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i8(&mut self) -> Result<i8> {
        Ok(self.take(1)?[0] as i8)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the expected payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn check_u16(value: usize, what: &str) -> Result<u16> {
    u16::try_from(value)
        .map_err(|_| Error::InvalidInput(format!("{what} {value} exceeds the u16 range")))
}

// ---------------------------------------------------------------------------
// Events.
// ---------------------------------------------------------------------------

pub fn write_events(path: &Path, stream: &EventStream) -> Result<()> {
    let mut buf = Vec::with_capacity(26 + stream.events.len() * 13);
    buf.extend_from_slice(EVENTS_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&check_u16(stream.width, "width")?.to_le_bytes());
    buf.extend_from_slice(&check_u16(stream.height, "height")?.to_le_bytes());
    buf.extend_from_slice(&stream.window.length().to_le_bytes());
    buf.extend_from_slice(&(stream.events.len() as u64).to_le_bytes());
    for e in &stream.events {
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.push(e.p as u8);
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<EventStream> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf);
    r.magic(EVENTS_MAGIC)?;
    r.version()?;
    let width = r.u16()? as usize;
    let height = r.u16()? as usize;
    let window = ExposureWindow::new(r.f64()?)?;
    let count = r.u64()? as usize;
    let mut events = Vec::with_capacity(count);
    for _ in 0..count {
        let x = r.u16()?;
        let y = r.u16()?;
        let t = r.f64()?;
        let p = r.i8()?;
        events.push(Event { x, y, t, p });
    }
    r.finish()?;
    let stream = EventStream {
        height,
        width,
        window,
        events,
    };
    let report = validate_stream(&stream);
    if !report.is_clean() {
        return Err(Error::Format(format!(
            "event stream violates invariants ({} violations; first: {})",
            report.violations.len(),
            report.violations[0]
        )));
    }
    Ok(stream)
}

// ---------------------------------------------------------------------------
// Frames.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    /// Raw little-endian f32 samples; lossless for pipeline intermediates.
    Sfrm,
    /// 16-bit binary PGM (P5, maxval 65535), big-endian samples.
    Pgm,
}

impl FrameFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FrameFormat::Sfrm => "sfrm",
            FrameFormat::Pgm => "pgm",
        }
    }
}

pub fn write_frame(path: &Path, frame: &Frame, format: FrameFormat) -> Result<()> {
    match format {
        FrameFormat::Sfrm => write_frame_sfrm(path, frame),
        FrameFormat::Pgm => write_frame_pgm(path, frame),
    }
}

/// Reads a frame, detecting SFRM or PGM from the leading magic bytes.
pub fn read_frame(path: &Path) -> Result<Frame> {
    let buf = fs::read(path)?;
    if buf.starts_with(FRAME_MAGIC) {
        parse_frame_sfrm(&buf)
    } else if buf.starts_with(b"P5") {
        parse_frame_pgm(&buf)
    } else {
        Err(Error::Format("unrecognized frame format".into()))
    }
}

pub fn write_frame_sfrm(path: &Path, frame: &Frame) -> Result<()> {
    let mut buf = Vec::with_capacity(18 + frame.data.len() * 4);
    buf.extend_from_slice(FRAME_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&check_u16(frame.width, "width")?.to_le_bytes());
    buf.extend_from_slice(&check_u16(frame.height, "height")?.to_le_bytes());
    buf.extend_from_slice(&frame.t.to_le_bytes());
    for v in &frame.data {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

fn parse_frame_sfrm(buf: &[u8]) -> Result<Frame> {
    let mut r = Reader::new(buf);
    r.magic(FRAME_MAGIC)?;
    r.version()?;
    let width = r.u16()? as usize;
    let height = r.u16()? as usize;
    let t = r.f64()?;
    let mut data = Vec::with_capacity(height * width);
    for _ in 0..height * width {
        data.push(r.f32()? as f64);
    }
    r.finish()?;
    Frame::from_data(height, width, t, data)
}

pub fn write_frame_pgm(path: &Path, frame: &Frame) -> Result<()> {
    let header = format!("P5\n{} {}\n65535\n", frame.width, frame.height);
    let mut buf = Vec::with_capacity(header.len() + frame.data.len() * 2);
    buf.extend_from_slice(header.as_bytes());
    for v in &frame.data {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

fn parse_frame_pgm(buf: &[u8]) -> Result<Frame> {
    // Tokenized header: "P5", width, height, maxval, then one whitespace
    // byte and the raster. '#' starts a comment through end of line.
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        while pos < buf.len() {
            let b = buf[pos];
            if b == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&buf[start..pos]).into_owned())
    };

    if token()? != "P5" {
        return Err(Error::Format("not a binary PGM file".into()));
    }
    let width: usize = token()?
        .parse()
        .map_err(|_| Error::Format("bad PGM width".into()))?;
    let height: usize = token()?
        .parse()
        .map_err(|_| Error::Format("bad PGM height".into()))?;
    let maxval: u32 = token()?
        .parse()
        .map_err(|_| Error::Format("bad PGM maxval".into()))?;
    if maxval != 65535 {
        return Err(Error::Format(format!(
            "expected 16-bit PGM (maxval 65535), got {maxval}"
        )));
    }
    pos += 1; // single whitespace byte after maxval
    let expected = height * width * 2;
    if buf.len() < pos + expected {
        return Err(Error::Format("truncated PGM raster".into()));
    }
    if buf.len() > pos + expected {
        return Err(Error::Format("trailing bytes after PGM raster".into()));
    }
    let data = buf[pos..]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
        .collect();
    Frame::from_data(height, width, 0.0, data)
}

// ---------------------------------------------------------------------------
// Fields.
// ---------------------------------------------------------------------------

pub fn write_field(path: &Path, field: &Field) -> Result<()> {
    let (h, w) = field.resolution();
    let n = field.segments();
    let k = field.kernel_size();
    let mut buf =
        Vec::with_capacity(22 + h * w * (8 * (n + 1) + k * k * 16 * n + 8));
    buf.extend_from_slice(FIELD_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&check_u16(h, "height")?.to_le_bytes());
    buf.extend_from_slice(&check_u16(w, "width")?.to_le_bytes());
    buf.extend_from_slice(&check_u16(n, "segment count")?.to_le_bytes());
    buf.extend_from_slice(&check_u16(k, "kernel size")?.to_le_bytes());
    buf.extend_from_slice(&field.window().length().to_le_bytes());

    let mut put = |vals: &[f64]| {
        for v in vals {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    };
    match field {
        Field::Spiking(f) => {
            for p in &f.pixels {
                put(&p.keypoints);
                put(&p.slopes);
                put(&p.intercepts);
                put(&[p.c]);
            }
        }
        Field::Kernel(f) => {
            for p in &f.pixels {
                put(&p.keypoints);
                for tap in &p.taps {
                    put(&tap.slopes);
                    put(&tap.intercepts);
                }
                put(&[p.c]);
            }
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<Field> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf);
    r.magic(FIELD_MAGIC)?;
    r.version()?;
    let h = r.u16()? as usize;
    let w = r.u16()? as usize;
    let n = r.u16()? as usize;
    let k = r.u16()? as usize;
    let window = ExposureWindow::new(r.f64()?)?;
    if n == 0 || k == 0 || k % 2 == 0 {
        return Err(Error::Format(format!(
            "invalid field dimensions: n={n}, k={k}"
        )));
    }

    let mut read_vec = |r: &mut Reader, len: usize| -> Result<Vec<f64>> {
        (0..len).map(|_| r.f64()).collect()
    };

    if k == 1 {
        let mut pixels = Vec::with_capacity(h * w);
        for _ in 0..h * w {
            let keypoints = read_vec(&mut r, n + 1)?;
            let slopes = read_vec(&mut r, n)?;
            let intercepts = read_vec(&mut r, n)?;
            let c = r.f64()?;
            pixels.push(
                SpikingPixel::new(keypoints, slopes, intercepts, c, window)
                    .map_err(|e| Error::Format(format!("invalid pixel on read: {e}")))?,
            );
        }
        r.finish()?;
        Ok(Field::Spiking(SpikingField::new(h, w, window, pixels)?))
    } else {
        let mut pixels = Vec::with_capacity(h * w);
        for _ in 0..h * w {
            let keypoints = read_vec(&mut r, n + 1)?;
            let mut taps = Vec::with_capacity(k * k);
            for _ in 0..k * k {
                let slopes = read_vec(&mut r, n)?;
                let intercepts = read_vec(&mut r, n)?;
                taps.push(LinearTap { slopes, intercepts });
            }
            let c = r.f64()?;
            pixels.push(KernelPixel { keypoints, taps, c });
        }
        r.finish()?;
        Ok(Field::Kernel(
            KernelField::new(h, w, window, k, pixels)
                .map_err(|e| Error::Format(format!("invalid field on read: {e}")))?,
        ))
    }
}

// ---------------------------------------------------------------------------
// Run configuration.
// ---------------------------------------------------------------------------

/// Everything a pipeline run needs: the scene, simulator knobs, fitter
/// hyperparameters, and render defaults. Every key has a default; see the
/// repository README for the full list.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub thresholds: ThresholdPair,
    pub epsilon_floor: f64,
    pub time_samples: usize,
    pub noise_drop: f64,
    pub noise_jitter: f64,
    pub noise_seed: u64,
    pub fit: FitConfig,
    pub render_frames: usize,
    pub render_scale: usize,
    pub render_clamp: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: SceneSpec {
                height: 64,
                width: 64,
                window: ExposureWindow::new(1.0).unwrap(),
                kind: SceneKind::MovingBar {
                    velocity: 32.0,
                    bar_width: 8.0,
                    foreground: 0.85,
                    background: 0.15,
                    offset: 4.25,
                },
            },
            thresholds: ThresholdPair::default(),
            epsilon_floor: 1e-3,
            time_samples: 1001,
            noise_drop: 0.0,
            noise_jitter: 0.0,
            noise_seed: 0,
            fit: FitConfig::default(),
            render_frames: 30,
            render_scale: 1,
            render_clamp: true,
        }
    }
}

fn parse_value<T: std::str::FromStr>(value: &str, line: usize, what: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::ConfigParse {
        line,
        msg: format!("cannot parse {what} from '{}'", value.trim()),
    })
}

fn parse_bool(value: &str, line: usize) -> Result<bool> {
    match value.trim() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => Err(Error::ConfigParse {
            line,
            msg: format!("cannot parse boolean from '{other}'"),
        }),
    }
}

/// Parses the flat `key = value` configuration; '#' starts a comment.
/// Unknown keys are rejected with their line number.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();

    // Scene pieces collected independently so keys may appear in any order.
    let mut kind = "moving-bar".to_string();
    let mut height = cfg.scene.height;
    let mut width = cfg.scene.width;
    let mut exposure = cfg.scene.window.length();
    let mut velocity = 32.0;
    let mut bar_width = 8.0;
    let mut foreground = 0.85;
    let mut background = 0.15;
    let mut offset = 4.25;
    let mut low = 0.1;
    let mut high = 0.9;
    let mut levels = vec![0.25, 0.75];
    let mut block_size = 4usize;
    let mut c_plus = cfg.thresholds.positive();
    let mut c_minus = cfg.thresholds.negative();

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::ConfigParse {
                line,
                msg: "expected 'key = value'".into(),
            });
        };
        let key = key.trim();
        match key {
            "scene.kind" => kind = value.trim().to_string(),
            "scene.height" => height = parse_value(value, line, "scene.height")?,
            "scene.width" => width = parse_value(value, line, "scene.width")?,
            "scene.exposure" => exposure = parse_value(value, line, "scene.exposure")?,
            "scene.velocity" => velocity = parse_value(value, line, "scene.velocity")?,
            "scene.bar-width" => bar_width = parse_value(value, line, "scene.bar-width")?,
            "scene.foreground" => foreground = parse_value(value, line, "scene.foreground")?,
            "scene.background" => background = parse_value(value, line, "scene.background")?,
            "scene.offset" => offset = parse_value(value, line, "scene.offset")?,
            "scene.low" => low = parse_value(value, line, "scene.low")?,
            "scene.high" => high = parse_value(value, line, "scene.high")?,
            "scene.levels" => {
                levels = value
                    .split(',')
                    .map(|v| parse_value(v, line, "scene.levels entry"))
                    .collect::<Result<Vec<f64>>>()?;
            }
            "scene.block-size" => block_size = parse_value(value, line, "scene.block-size")?,
            "sim.c-plus" => c_plus = parse_value(value, line, "sim.c-plus")?,
            "sim.c-minus" => c_minus = parse_value(value, line, "sim.c-minus")?,
            "sim.epsilon-floor" => {
                cfg.epsilon_floor = parse_value(value, line, "sim.epsilon-floor")?
            }
            "sim.time-samples" => {
                cfg.time_samples = parse_value(value, line, "sim.time-samples")?
            }
            "sim.noise-drop" => cfg.noise_drop = parse_value(value, line, "sim.noise-drop")?,
            "sim.noise-jitter" => {
                cfg.noise_jitter = parse_value(value, line, "sim.noise-jitter")?
            }
            "sim.noise-seed" => cfg.noise_seed = parse_value(value, line, "sim.noise-seed")?,
            "fit.mode" => {
                cfg.fit.mode = match value.trim() {
                    "supervised" => FitMode::Supervised,
                    "event-only" => FitMode::EventOnly,
                    other => {
                        return Err(Error::ConfigParse {
                            line,
                            msg: format!("unknown fit mode '{other}'"),
                        })
                    }
                }
            }
            "fit.segments" => cfg.fit.segments = parse_value(value, line, "fit.segments")?,
            "fit.kernel-size" => {
                cfg.fit.kernel_size = parse_value(value, line, "fit.kernel-size")?
            }
            "fit.outer-iters" => {
                cfg.fit.outer_iters = parse_value(value, line, "fit.outer-iters")?
            }
            "fit.inner-iters" => {
                cfg.fit.inner_iters = parse_value(value, line, "fit.inner-iters")?
            }
            "fit.step-size" => cfg.fit.step_size = parse_value(value, line, "fit.step-size")?,
            "fit.loss" => {
                cfg.fit.loss = match value.trim() {
                    "l1" | "L1" => LossKind::L1,
                    "l2" | "L2" => LossKind::L2,
                    other => {
                        return Err(Error::ConfigParse {
                            line,
                            msg: format!("unknown loss '{other}'"),
                        })
                    }
                }
            }
            "fit.event-weight" => {
                cfg.fit.event_weight = parse_value(value, line, "fit.event-weight")?
            }
            "fit.smoothness-weight" => {
                cfg.fit.smoothness_weight = parse_value(value, line, "fit.smoothness-weight")?
            }
            "fit.event-threshold" => {
                cfg.fit.event_threshold = parse_value(value, line, "fit.event-threshold")?
            }
            "fit.log-epsilon" => {
                cfg.fit.log_epsilon = parse_value(value, line, "fit.log-epsilon")?
            }
            "fit.seed" => cfg.fit.seed = parse_value(value, line, "fit.seed")?,
            "fit.tolerance" => cfg.fit.tolerance = parse_value(value, line, "fit.tolerance")?,
            "fit.freeze-keypoints" => cfg.fit.freeze_keypoints = parse_bool(value, line)?,
            "render.frames" => cfg.render_frames = parse_value(value, line, "render.frames")?,
            "render.scale" => cfg.render_scale = parse_value(value, line, "render.scale")?,
            "render.clamp" => cfg.render_clamp = parse_bool(value, line)?,
            other => {
                return Err(Error::ConfigParse {
                    line,
                    msg: format!("unknown key '{other}'"),
                })
            }
        }
    }

    let window = ExposureWindow::new(exposure)?;
    let scene_kind = match kind.as_str() {
        "moving-bar" => SceneKind::MovingBar {
            velocity,
            bar_width,
            foreground,
            background,
            offset,
        },
        "gradient" => SceneKind::LinearGradient {
            low,
            high,
            velocity,
        },
        "blocks" => SceneKind::Blocks { levels, block_size },
        other => {
            return Err(Error::Config(format!("unknown scene kind '{other}'")));
        }
    };
    cfg.scene = SceneSpec {
        height,
        width,
        window,
        kind: scene_kind,
    };
    cfg.thresholds = ThresholdPair::new(c_plus, c_minus)?;
    cfg.scene.validate()?;
    cfg.fit.validate()?;
    if cfg.time_samples < 2 {
        return Err(Error::Config("sim.time-samples must be at least 2".into()));
    }
    if !(cfg.epsilon_floor > 0.0) {
        return Err(Error::Config("sim.epsilon-floor must be positive".into()));
    }
    if cfg.render_frames == 0 || cfg.render_scale == 0 {
        return Err(Error::Config(
            "render.frames and render.scale must be positive".into(),
        ));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spikerep::{keypoints_from_widths, normalization_constant};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::TempDir;

    fn window(t: f64) -> ExposureWindow {
        ExposureWindow::new(t).unwrap()
    }

    fn random_stream(rng: &mut ChaCha8Rng, h: usize, w: usize) -> EventStream {
        let count = rng.random_range(0..200);
        let events: Vec<Event> = (0..count)
            .map(|_| {
                Event::new(
                    rng.random_range(0..w as u16),
                    rng.random_range(0..h as u16),
                    rng.random_range(-0.5..=0.5),
                    if rng.random_range(0.0..1.0) < 0.5 { 1 } else { -1 },
                )
            })
            .collect();
        EventStream::from_unsorted(h, w, window(1.0), events)
    }

    fn random_spiking_field(rng: &mut ChaCha8Rng, h: usize, w: usize, n: usize) -> SpikingField {
        let win = window(1.0);
        let pixels = (0..h * w)
            .map(|_| {
                let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let keypoints = keypoints_from_widths(&raw, win);
                let slopes: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let intercepts: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let c = normalization_constant(
                    &slopes,
                    &intercepts,
                    &keypoints,
                    rng.random_range(0.0..1.0),
                    win,
                );
                SpikingPixel {
                    keypoints,
                    slopes,
                    intercepts,
                    c,
                }
            })
            .collect();
        SpikingField::new(h, w, win, pixels).unwrap()
    }

    #[test]
    fn event_round_trip_is_lossless_and_header_is_26_bytes() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("events.sevt");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let stream = random_stream(&mut rng, 8, 8);
            write_events(&path, &stream).unwrap();
            assert_eq!(
                fs::metadata(&path).unwrap().len(),
                26 + 13 * stream.events.len() as u64
            );
            assert_eq!(read_events(&path).unwrap(), stream);
        }

        let empty = EventStream::empty(4, 4, window(1.0));
        write_events(&path, &empty).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 26);
    }

    #[test]
    fn corrupted_magic_bytes_are_rejected() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("events.sevt");
        let stream = EventStream::empty(2, 2, window(1.0));
        write_events(&path, &stream).unwrap();
        let original = fs::read(&path).unwrap();
        for i in 0..4 {
            let mut bad = original.clone();
            bad[i] ^= 0x20;
            fs::write(&path, &bad).unwrap();
            assert!(read_events(&path).is_err(), "magic byte {i} not checked");
        }
    }

    #[test]
    fn truncated_and_invalid_event_files_are_rejected() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("events.sevt");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stream = random_stream(&mut rng, 4, 4);
        write_events(&path, &stream).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(read_events(&path).is_err());

        // Out-of-range coordinate: invariant violation surfaces on read.
        let bad = EventStream {
            height: 2,
            width: 2,
            window: window(1.0),
            events: vec![Event::new(7, 0, 0.0, 1)],
        };
        write_events(&path, &bad).unwrap();
        assert!(read_events(&path).is_err());
    }

    #[test]
    fn sfrm_round_trip_is_bitwise_for_f32_data() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("frame.sfrm");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..12)
            .map(|_| rng.random_range(0.0f32..1.0) as f64)
            .collect();
        let frame = Frame::from_data(3, 4, 0.125, data).unwrap();
        write_frame(&path, &frame, FrameFormat::Sfrm).unwrap();
        assert_eq!(read_frame(&path).unwrap(), frame);
    }

    #[test]
    fn pgm_round_trip_is_within_quantization() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("frame.pgm");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frame = Frame::from_data(
            5,
            7,
            0.0,
            (0..35).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        write_frame(&path, &frame, FrameFormat::Pgm).unwrap();
        let back = read_frame(&path).unwrap();
        for (a, b) in frame.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 1.0 / 131070.0);
        }

        let extremes = Frame::from_data(1, 2, 0.0, vec![0.0, 1.0]).unwrap();
        write_frame(&path, &extremes, FrameFormat::Pgm).unwrap();
        let bytes = fs::read(&path).unwrap();
        let raster = &bytes[bytes.len() - 4..];
        assert_eq!(raster, &[0, 0, 0xFF, 0xFF]);
        assert_eq!(read_frame(&path).unwrap().data, vec![0.0, 1.0]);
    }

    #[test]
    fn spiking_field_round_trip_and_size_formula() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("field.sfld");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (h, w, n) = (3usize, 4usize, 5usize);
        let field = Field::Spiking(random_spiking_field(&mut rng, h, w, n));
        write_field(&path, &field).unwrap();
        let expected = 22 + h * w * (8 * (n + 1) + 16 * n + 8);
        assert_eq!(fs::metadata(&path).unwrap().len(), expected as u64);
        assert_eq!(read_field(&path).unwrap(), field);

        // Scalar fields record kernel size 1.
        let bytes = fs::read(&path).unwrap();
        assert_eq!(u16::from_le_bytes([bytes[12], bytes[13]]), 1);
    }

    #[test]
    fn kernel_field_round_trip_and_size_formula() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("field.sfld");
        let win = window(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (h, w, n, k) = (2usize, 2usize, 3usize, 3usize);
        let pixels: Vec<KernelPixel> = (0..h * w)
            .map(|_| {
                let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                KernelPixel {
                    keypoints: keypoints_from_widths(&raw, win),
                    taps: (0..k * k)
                        .map(|_| LinearTap {
                            slopes: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
                            intercepts: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
                        })
                        .collect(),
                    c: rng.random_range(-1.0..1.0),
                }
            })
            .collect();
        let field = Field::Kernel(KernelField::new(h, w, win, k, pixels).unwrap());
        write_field(&path, &field).unwrap();
        let expected = 22 + h * w * (8 * (n + 1) + k * k * 16 * n + 8);
        assert_eq!(fs::metadata(&path).unwrap().len(), expected as u64);
        assert_eq!(read_field(&path).unwrap(), field);
    }

    #[test]
    fn field_reader_rejects_keypoint_violations() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("field.sfld");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let field = Field::Spiking(random_spiking_field(&mut rng, 1, 1, 2));
        write_field(&path, &field).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        // Corrupt the second keypoint (offset 22 + 8).
        bytes[30..38].copy_from_slice(&f64::NAN.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        assert!(read_field(&path).is_err());
    }

    #[test]
    fn empty_config_gives_documented_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.scene.height, 64);
        assert_eq!(cfg.fit.segments, 10);
        assert_eq!(cfg.render_frames, 30);
    }

    #[test]
    fn config_parses_values_and_comments() {
        let text = "\
# comment line
scene.kind = gradient
scene.width = 32   # trailing comment
scene.height = 16
scene.velocity = 0.5
fit.loss = l2
fit.segments = 4
render.frames = 12
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.scene.width, 32);
        assert_eq!(cfg.fit.segments, 4);
        assert_eq!(cfg.fit.loss, LossKind::L2);
        assert!(matches!(
            cfg.scene.kind,
            SceneKind::LinearGradient { velocity, .. } if velocity == 0.5
        ));
        assert_eq!(cfg.render_frames, 12);
    }

    #[test]
    fn config_rejects_unknown_keys_with_line_numbers() {
        let err = parse_config("scene.width = 8\nfoo = 1\n").unwrap_err();
        match err {
            Error::ConfigParse { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("foo"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn config_rejects_invalid_values() {
        assert!(parse_config("fit.segments = 0").is_err());
        assert!(parse_config("scene.width = oops").is_err());
        assert!(parse_config("sim.c-plus = -1").is_err());
        assert!(parse_config("scene.kind = nosuch").is_err());
    }
}
