//! Command-line pipeline: simulate scenes, fit fields, render sharp video,
//! run the event-double-integral baseline, and score reconstructions.
//!
//! Exit codes: 0 on success, 1 on runtime failures, 2 on usage errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use spikedeblur::baseline::edi_reconstruct;
use spikedeblur::event::EventStream;
use spikedeblur::fitter::{fit_event_only, fit_supervised, FitMode, FitReport};
use spikedeblur::frame::{Frame, FrameSequence};
use spikedeblur::io::{
    load_config, read_events, read_field, read_frame, write_events, write_field, write_frame,
    FrameFormat, RunConfig,
};
use spikedeblur::metrics::{sequence_metrics, write_report};
use spikedeblur::render::{render_superres, render_video, RenderRequest};
use spikedeblur::simulator::{apply_event_noise, sample_scene, simulate_events, synthesize_blur};
use spikedeblur::spikerep::Field;

#[derive(Parser)]
#[command(
    name = "spikedeblur",
    version,
    about = "Event-based motion deblurring with a piecewise-linear spiking representation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    /// Raw f32 frames; lossless, carries timestamps.
    #[default]
    Sfrm,
    /// 16-bit binary PGM; viewable, quantized, no timestamps.
    Pgm,
}

impl From<OutputFormat> for FrameFormat {
    fn from(f: OutputFormat) -> FrameFormat {
        match f {
            OutputFormat::Sfrm => FrameFormat::Sfrm,
            OutputFormat::Pgm => FrameFormat::Pgm,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured scene: events, exposure blur, and optionally
    /// ground-truth frames.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_events: PathBuf,
        #[arg(long)]
        out_blur: PathBuf,
        /// Directory for ground-truth frames (written when --frames > 0).
        #[arg(long)]
        out_truth_dir: Option<PathBuf>,
        /// Number of ground-truth frames to sample.
        #[arg(long, default_value_t = 0)]
        frames: usize,
        #[arg(long, value_enum, default_value_t)]
        format: OutputFormat,
    },
    /// Fit a field to a blurry frame plus events (event-only mode) or
    /// sampled sharp frames (supervised mode, when --targets-dir is given).
    Fit {
        #[arg(long)]
        blur: PathBuf,
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        targets_dir: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_field: PathBuf,
        /// Loss log destination; defaults to <out-field>.loss.csv.
        #[arg(long)]
        out_report: Option<PathBuf>,
    },
    /// Render a fitted field at the requested timestamps.
    Render {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        blur: PathBuf,
        /// Frame rate; the frame count is round(fps * T).
        #[arg(long, conflicts_with = "timestamps")]
        fps: Option<f64>,
        /// Comma-separated explicit timestamps.
        #[arg(long)]
        timestamps: Option<String>,
        /// Integer spatial upscaling factor (scalar fields only).
        #[arg(long, default_value_t = 1)]
        scale: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: OutputFormat,
        /// Keep values outside [0, 1] instead of clamping.
        #[arg(long)]
        no_clamp: bool,
    },
    /// Event-double-integral baseline reconstruction.
    Edi {
        #[arg(long)]
        blur: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Assumed per-event log-intensity change (> 0).
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        fps: f64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: OutputFormat,
    },
    /// Per-frame and mean MSE / PSNR / SSIM between two frame directories.
    Eval {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        truth_dir: PathBuf,
        /// Report CSV: frame_index, t, mse, psnr, ssim.
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<spikedeblur::Error> for CliError {
    fn from(e: spikedeblur::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn frame_name(index: usize, format: OutputFormat) -> String {
    format!("frame_{index:04}.{}", FrameFormat::from(format).extension())
}

fn write_frames(dir: &Path, frames: &[Frame], format: OutputFormat) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    for (i, frame) in frames.iter().enumerate() {
        write_frame(&dir.join(frame_name(i, format)), frame, format.into())?;
    }
    Ok(())
}

/// Reads every .sfrm/.pgm in the directory in filename order. PGM frames
/// carry no timestamps, so when the collected timestamps are not strictly
/// increasing the frame index is used instead.
fn read_frames_dir(dir: &Path) -> Result<Vec<Frame>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("sfrm") | Some("pgm")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Runtime(format!(
            "no .sfrm or .pgm frames found in {}",
            dir.display()
        )));
    }
    let mut frames = Vec::with_capacity(paths.len());
    for p in &paths {
        frames.push(read_frame(p)?);
    }
    let increasing = frames.windows(2).all(|p| p[1].t > p[0].t);
    if !increasing {
        for (i, f) in frames.iter_mut().enumerate() {
            f.t = i as f64;
        }
    }
    Ok(frames)
}

fn write_loss_log(path: &Path, report: &FitReport) -> Result<(), CliError> {
    let mut text = String::from("iteration,loss\n");
    for (i, loss) in report.loss_history.iter().enumerate() {
        text.push_str(&format!("{i},{loss}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate {
            config,
            out_events,
            out_blur,
            out_truth_dir,
            frames,
            format,
        } => {
            let cfg: RunConfig = load_config(&config)?;
            let mut events =
                simulate_events(&cfg.scene, cfg.thresholds, cfg.epsilon_floor, cfg.time_samples)?;
            if cfg.noise_drop > 0.0 || cfg.noise_jitter > 0.0 {
                events =
                    apply_event_noise(&events, cfg.noise_drop, cfg.noise_jitter, cfg.noise_seed)?;
            }
            write_events(&out_events, &events)?;
            let blur = synthesize_blur(&cfg.scene, cfg.time_samples)?;
            write_frame(&out_blur, &blur, format.into())?;
            if frames > 0 {
                let dir = out_truth_dir
                    .ok_or_else(|| CliError::Usage("--frames requires --out-truth-dir".into()))?;
                let truth: Vec<Frame> = cfg
                    .scene
                    .window
                    .uniform_timestamps(frames)
                    .into_iter()
                    .map(|t| sample_scene(&cfg.scene, t))
                    .collect::<Result<_, _>>()?;
                write_frames(&dir, &truth, format)?;
            }
            println!(
                "simulated {} events over a {}x{} scene",
                events.len(),
                cfg.scene.height,
                cfg.scene.width
            );
            Ok(())
        }

        Command::Fit {
            blur,
            events,
            targets_dir,
            config,
            out_field,
            out_report,
        } => {
            if events.is_none() && targets_dir.is_none() {
                return Err(CliError::Usage(
                    "fit needs --events (event-only mode) or --targets-dir (supervised mode)"
                        .into(),
                ));
            }
            let cfg: RunConfig = load_config(&config)?;
            let blurry = read_frame(&blur)?;
            let (field, report) = if let Some(dir) = targets_dir {
                let frames = read_frames_dir(&dir)?;
                if frames.windows(2).any(|p| p[1].t <= p[0].t) {
                    return Err(CliError::Runtime(
                        "supervised targets need strictly increasing timestamps; \
                         use the sfrm format"
                            .into(),
                    ));
                }
                let targets = FrameSequence::new(frames)?;
                let mut fit_cfg = cfg.fit.clone();
                fit_cfg.mode = FitMode::Supervised;
                fit_supervised(&blurry, &targets, cfg.scene.window, &fit_cfg)?
            } else {
                let stream: EventStream = read_events(&events.unwrap())?;
                let mut fit_cfg = cfg.fit.clone();
                fit_cfg.mode = FitMode::EventOnly;
                let (f, r) = fit_event_only(&blurry, &stream, &fit_cfg)?;
                (Field::Spiking(f), r)
            };
            write_field(&out_field, &field)?;
            let report_path = out_report.unwrap_or_else(|| {
                let mut p = out_field.as_os_str().to_owned();
                p.push(".loss.csv");
                PathBuf::from(p)
            });
            write_loss_log(&report_path, &report)?;
            println!(
                "fit finished: final loss {:.6e}, {} iterations, converged = {}",
                report.final_loss, report.iterations, report.converged
            );
            Ok(())
        }

        Command::Render {
            field,
            blur,
            fps,
            timestamps,
            scale,
            out_dir,
            format,
            no_clamp,
        } => {
            let field = read_field(&field)?;
            let blurry = read_frame(&blur)?;
            let window = field.window();
            let times: Vec<f64> = match (fps, timestamps) {
                (Some(fps), None) => {
                    if !(fps > 0.0) {
                        return Err(CliError::Usage("--fps must be positive".into()));
                    }
                    let n = (fps * window.length()).round() as usize;
                    if n == 0 {
                        return Err(CliError::Usage(
                            "--fps too low: zero frames in the exposure window".into(),
                        ));
                    }
                    window.uniform_timestamps(n)
                }
                (None, Some(list)) => {
                    let mut ts = Vec::new();
                    for tok in list.split(',') {
                        ts.push(tok.trim().parse::<f64>().map_err(|_| {
                            CliError::Usage(format!("bad timestamp '{}'", tok.trim()))
                        })?);
                    }
                    ts
                }
                _ => {
                    return Err(CliError::Usage(
                        "render needs exactly one of --fps or --timestamps".into(),
                    ))
                }
            };
            let (h, w) = field.resolution();
            let scale = scale.max(1);
            let mut request = RenderRequest::new(times, h * scale, w * scale)?;
            if no_clamp {
                request = request.unclamped();
            }
            let sequence = if scale == 1 {
                render_video(&field, &blurry, &request)?
            } else {
                match &field {
                    Field::Spiking(f) => render_superres(f, &blurry, &request)?,
                    Field::Kernel(_) => {
                        return Err(CliError::Usage(
                            "--scale > 1 requires a scalar (non-kernel) field".into(),
                        ))
                    }
                }
            };
            write_frames(&out_dir, sequence.frames(), format)?;
            println!("rendered {} frames into {}", sequence.len(), out_dir.display());
            Ok(())
        }

        Command::Edi {
            blur,
            events,
            threshold,
            fps,
            out_dir,
            format,
        } => {
            if !(threshold > 0.0) {
                return Err(CliError::Usage(format!(
                    "--threshold must be positive, got {threshold}"
                )));
            }
            if !(fps > 0.0) {
                return Err(CliError::Usage("--fps must be positive".into()));
            }
            let blurry = read_frame(&blur)?;
            let stream = read_events(&events)?;
            let n = (fps * stream.window.length()).round() as usize;
            if n == 0 {
                return Err(CliError::Usage(
                    "--fps too low: zero frames in the exposure window".into(),
                ));
            }
            let times = stream.window.uniform_timestamps(n);
            let sequence = edi_reconstruct(&blurry, &stream, threshold, &times)?;
            write_frames(&out_dir, sequence.frames(), format)?;
            println!(
                "reconstructed {} frames into {}",
                sequence.len(),
                out_dir.display()
            );
            Ok(())
        }

        Command::Eval {
            pred_dir,
            truth_dir,
            out,
        } => {
            let pred = FrameSequence::new(read_frames_dir(&pred_dir)?)?;
            let truth = FrameSequence::new(read_frames_dir(&truth_dir)?)?;
            let metrics = sequence_metrics(&pred, &truth)?;
            let mut buf = Vec::new();
            write_report(&mut buf, &metrics)?;
            fs::write(&out, buf)?;
            println!(
                "mean mse {:.6e}, psnr {:.3} dB, ssim {:.5} over {} frames",
                metrics.mean_mse,
                metrics.mean_psnr,
                metrics.mean_ssim,
                metrics.per_frame.len()
            );
            Ok(())
        }
    }
}
