// Temporary diagnostics for fit tuning; removed before release.
mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spikedeblur::baseline::edi_reconstruct;
use spikedeblur::fitter::{fit_supervised, FitConfig, FitMode, LossKind};
use spikedeblur::frame::{Frame, FrameSequence};
use spikedeblur::metrics::mse;
use spikedeblur::simulator::{
    sample_scene, simulate_events, synthesize_blur, SceneKind, SceneSpec, ThresholdPair,
};
use spikedeblur::spikerep::{Field, SpikingField, SpikingPixel};

#[test]
#[ignore]
fn probe_c08_edi_step() {
    let win = window(1.0);
    let step_t = 0.1;
    let pixel = SpikingPixel {
        keypoints: vec![win.start(), step_t, win.end()],
        slopes: vec![0.0, 0.0],
        intercepts: vec![0.25, 0.5],
        c: 0.0,
    };
    let field = SpikingField::new(4, 4, win, vec![pixel; 16]).unwrap();
    let spec = SceneSpec {
        height: 4,
        width: 4,
        window: win,
        kind: SceneKind::FieldPlayback(field),
    };
    let c_thr = std::f64::consts::LN_2;
    let sim_thresholds = ThresholdPair::new(c_thr - 1e-9, -(c_thr - 1e-9)).unwrap();
    let events = simulate_events(&spec, sim_thresholds, 1e-12, 1001).unwrap();
    println!("events: {}", events.len());
    for e in events.events.iter().take(3) {
        println!("  event t={:.15} p={}", e.t, e.p);
    }
    let blur = synthesize_blur(&spec, 101).unwrap();
    println!("blur[0] = {}", blur.data[0]);
    let render_times = win.uniform_timestamps(20);
    let recon = edi_reconstruct(&blur, &events, c_thr, &render_times).unwrap();
    for (t, f) in render_times.iter().zip(recon.frames()) {
        let truth = sample_scene(&spec, *t).unwrap();
        let m = mse(f, &truth).unwrap();
        if m > 1e-7 {
            println!("t = {t:.6}: mse {m:.3e} recon {} truth {}", f.data[0], truth.data[0]);
        }
    }
}

#[test]
#[ignore]
fn probe_c06_event_fit_pixel() {
    use spikedeblur::fitter::fit_event_only;
    let win = window(1.0);
    let spec = SceneSpec {
        height: 64,
        width: 64,
        window: win,
        kind: SceneKind::MovingBar {
            velocity: 32.0,
            bar_width: 8.0,
            foreground: 0.85,
            background: 0.15,
            offset: 4.25,
        },
    };
    let thresholds = ThresholdPair::symmetric(0.2).unwrap();
    let events = simulate_events(&spec, thresholds, 1e-3, 1001).unwrap();
    let blurry = synthesize_blur(&spec, 2001).unwrap();
    let cfg = FitConfig {
        mode: spikedeblur::fitter::FitMode::EventOnly,
        loss: LossKind::L2,
        segments: 10,
        event_threshold: 0.2,
        outer_iters: 12,
        inner_iters: 30,
        tolerance: 1e-10,
        ..FitConfig::default()
    };
    let (field, report) = fit_event_only(&blurry, &events, &cfg).unwrap();
    println!("final loss {:.4e}, iters {}", report.final_loss, report.iterations);

    // Pick a fully swept pixel: x = 20, y = 0 (bar travels 4.25..15.25 + width).
    let (x, y) = (21usize, 0usize);
    let evs: Vec<_> = events
        .events
        .iter()
        .filter(|e| e.x as usize == x && e.y as usize == y)
        .collect();
    println!("pixel ({x},{y}): {} events, blur {:.4}", evs.len(), blurry.get(y, x));
    for e in &evs {
        println!("  ev t={:+.4} p={}", e.t, e.p);
    }
    let p = field.pixel(y, x);
    println!("keypoints: {:?}", p.keypoints.iter().map(|k| (k * 1e4).round() / 1e4).collect::<Vec<_>>());
    // Rendered vs truth at frame times.
    let mut worst = (0.0f64, 0.0f64);
    for &t in &win.uniform_timestamps(30) {
        let v = p.value_at(t).clamp(0.0, 1.0);
        let truth = spec.intensity_at(x as f64, y as f64, t);
        if (v - truth).abs() > worst.0 {
            worst = ((v - truth).abs(), t);
        }
        println!("  t={t:+.3} fit={v:.4} truth={truth:.4}");
    }
    println!("worst dev {:.4} at t={:+.3}", worst.0, worst.1);

    // Where do we lose to the event-double-integral baseline?
    let times = win.uniform_timestamps(30);
    let edi = edi_reconstruct(&blurry, &events, 0.2, &times).unwrap();
    let mut rows: Vec<(f64, f64, f64, usize)> = (0..64 * 64)
        .map(|idx| {
            let (py, px) = (idx / 64, idx % 64);
            let mut ours_mse = 0.0;
            let mut edi_mse = 0.0;
            for (fi, &t) in times.iter().enumerate() {
                let truth = spec.intensity_at(px as f64, py as f64, t);
                let v = field.pixels[idx].value_at(t).clamp(0.0, 1.0);
                let e = edi.frames()[fi].data[idx];
                ours_mse += (v - truth) * (v - truth);
                edi_mse += (e - truth) * (e - truth);
            }
            (ours_mse - edi_mse, ours_mse / 30.0, edi_mse / 30.0, idx)
        })
        .collect();
    let total_ours: f64 = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
    let total_edi: f64 = rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64;
    println!("mean MSE ours {total_ours:.4e} vs edi {total_edi:.4e}");
    rows.sort_by(|a, b| b.0.total_cmp(&a.0));
    let regressed = rows.iter().filter(|r| r.0 > 0.0).count();
    println!("pixels where ours worse: {regressed} / {}", rows.len());
    for (diff, ours, edi_m, idx) in rows.iter().take(8) {
        let evs = events
            .events
            .iter()
            .filter(|e| (e.y as usize * 64 + e.x as usize) == *idx)
            .count();
        println!(
            "  px ({}, {}): ours {ours:.3e} edi {edi_m:.3e} diff {diff:.3e} events {evs}",
            idx % 64,
            idx / 64
        );
    }
}

#[test]
#[ignore]
fn probe_c05_pixel_distribution() {
    let win = window(1.0);
    let n = 10;
    let (h, w) = (16usize, 16usize);
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let truth = random_renderable_field(&mut rng, h, w, n, win);
    let blurry = field_blur(&truth);
    let times = win.uniform_timestamps(60);
    let frames: Vec<Frame> = times
        .iter()
        .map(|&t| {
            Frame::from_data(h, w, t, truth.pixels.iter().map(|p| p.value_at(t)).collect())
                .unwrap()
        })
        .collect();
    let targets = FrameSequence::new(frames).unwrap();

    let cfg = FitConfig {
        mode: FitMode::Supervised,
        loss: LossKind::L2,
        segments: n,
        outer_iters: 25,
        tolerance: 1e-14,
        ..FitConfig::default()
    };
    let start = std::time::Instant::now();
    let (field, report) = fit_supervised(&blurry, &targets, win, &cfg).unwrap();
    println!("fit took {:.1}s, iters {}", start.elapsed().as_secs_f64(), report.iterations);
    let field = match field {
        Field::Spiking(f) => f,
        _ => unreachable!(),
    };

    // Per-pixel mean squared residual over the sample times.
    let mut per_pixel: Vec<(f64, usize)> = (0..h * w)
        .map(|idx| {
            let m: f64 = times
                .iter()
                .map(|&t| {
                    let v = field.pixels[idx].value_at(t).clamp(0.0, 1.0);
                    let y = truth.pixels[idx].value_at(t);
                    (v - y) * (v - y)
                })
                .sum::<f64>()
                / times.len() as f64;
            (m, idx)
        })
        .collect();
    per_pixel.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total: f64 = per_pixel.iter().map(|p| p.0).sum::<f64>() / (h * w) as f64;
    println!("overall MSE {total:.3e}");
    let buckets = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];
    for b in buckets {
        let count = per_pixel.iter().filter(|p| p.0 > b).count();
        println!("pixels with MSE > {b:.0e}: {count}");
    }
    for (m, idx) in per_pixel.iter().take(3) {
        println!("--- worst pixel {idx}: MSE {m:.3e}");
        println!("  true kp: {:?}", &truth.pixels[*idx].keypoints[1..n]);
        println!("  fit  kp: {:?}", &field.pixels[*idx].keypoints[1..n]);
    }
}
