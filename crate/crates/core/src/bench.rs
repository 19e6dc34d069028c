//! Desk-scale FID-versus-size curves and per-stage runtime measurements.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{fit_gaussian, FidReference};
use crate::features::{FeatureBackend, MockBackend};
use crate::ingest::{Frame, FrameStream};
use crate::render::{plan_layout, render_storyboard};
use crate::report::RunReport;
use crate::summarize::{
    run_pipeline, summarize_features, summarize_time, FrameFeatures, Method, PipelineOptions,
    Storyboard, SummarizerConfig,
};

/// Reference wall-clock seconds for one hour of video sampled at 1 fps.
pub const REFERENCE_RUNTIMES_S: [(Method, f64); 4] = [
    (Method::Time, 13.0),
    (Method::Inception, 86.0),
    (Method::Uid, 216.0),
    (Method::Scda, 74.0),
];

pub fn reference_runtime(method: Method) -> f64 {
    REFERENCE_RUNTIMES_S
        .iter()
        .find(|(m, _)| *m == method)
        .map(|(_, s)| *s)
        .expect("every method has a reference runtime")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BenchBackend {
    Mock,
    Model,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub n_frames: usize,
    pub methods: Vec<Method>,
    pub sizes: Vec<usize>,
    pub backend: BenchBackend,
    pub repetitions: usize,
    pub lambda: f64,
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::InvalidLayout("repetitions must be at least 1".into()));
        }
        if let Some(&s) = self.sizes.iter().find(|&&s| s > self.n_frames || s == 0) {
            return Err(Error::TooFewFrames {
                n_frames: self.n_frames,
                n_clusters: s,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidRow {
    pub method: Method,
    pub storyboard_size: usize,
    pub fid: f64,
}

/// Storyboard for `method` at `size` from precomputed features.
pub fn storyboard_for(
    method: Method,
    size: usize,
    features: &FrameFeatures,
    lambda: f64,
) -> Result<Storyboard> {
    match method {
        Method::Time => summarize_time(features.n_frames(), size),
        _ => summarize_features(
            features,
            &SummarizerConfig::new(method, size).with_lambda(lambda),
        ),
    }
}

/// FID between all frames and each method's storyboard, for every size.
pub fn run_fid_curve(spec: &BenchSpec, features: &FrameFeatures) -> Result<Vec<FidRow>> {
    spec.validate()?;
    if features.n_frames() != spec.n_frames {
        return Err(Error::ShapeMismatch(format!(
            "bench expects {} frames, features cover {}",
            spec.n_frames,
            features.n_frames()
        )));
    }
    let latents: Vec<&[f32]> = features.latents.iter().map(|v| v.values.as_slice()).collect();
    let reference = FidReference::new(fit_gaussian(&latents)?)?;
    let mut rows = Vec::new();
    for &method in &spec.methods {
        for &size in &spec.sizes {
            for _ in 0..spec.repetitions {
                let board = storyboard_for(method, size, features, spec.lambda)?;
                let key: Vec<&[f32]> = board.key_frames.iter().map(|&k| latents[k]).collect();
                rows.push(FidRow {
                    method,
                    storyboard_size: size,
                    fid: reference.fid(&fit_gaussian(&key)?)?,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_fid_csv<W: Write>(rows: &[FidRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "storyboard_size", "fid"])?;
    for r in rows {
        w.write_record([r.method.to_string(), r.storyboard_size.to_string(), format!("{}", r.fid)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn fid_markdown(rows: &[FidRow]) -> String {
    let mut out = String::from("| method | size | fid |\n|---|---:|---:|\n");
    for r in rows {
        out.push_str(&format!("| {} | {} | {:.6} |\n", r.method, r.storyboard_size, r.fid));
    }
    out
}

/// Runs the full pipeline (including rendering) once per method on
/// `spec.n_frames` synthetic frames and reports stage timings. The storyboard
/// size is the first entry of `spec.sizes` (16 when empty).
pub fn run_timing(spec: &BenchSpec, backend: &dyn FeatureBackend) -> Result<Vec<RunReport>> {
    spec.validate()?;
    let n_clusters = spec.sizes.first().copied().unwrap_or(16);
    let mut reports = Vec::new();
    for &method in &spec.methods {
        for _ in 0..spec.repetitions {
            let cfg = SummarizerConfig::new(method, n_clusters).with_lambda(spec.lambda);
            let stream = FrameStream::from_frames(synthetic_frames(spec.n_frames, 32, 24), 1.0);
            let opts = PipelineOptions {
                thumbnail_size: (64, 48),
                ..PipelineOptions::default()
            };
            let out = run_pipeline(stream, &cfg, Some(backend), &opts)?;
            let mut timings = out.timings;
            let start = Instant::now();
            let layout = plan_layout(n_clusters, 64, 48)?;
            render_storyboard(&out.storyboard, &out.key_frame_thumbnails(), &layout)?;
            timings.render = start.elapsed().as_secs_f64();
            reports.push(RunReport::new(
                method,
                out.storyboard.n_frames,
                n_clusters,
                spec.lambda,
                timings,
            ));
        }
    }
    Ok(reports)
}

/// Markdown table of measured totals next to the reference runtimes.
pub fn timing_markdown(reports: &[RunReport]) -> String {
    let mut out = String::from(
        "| method | frames | decode | extract | distance | cluster | render | total s | reference s | ratio |\n\
         |---|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n",
    );
    for r in reports {
        let t = &r.wall_times;
        let reference = reference_runtime(r.method);
        out.push_str(&format!(
            "| {} | {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.0} | {:.4} |\n",
            r.method,
            r.n_frames,
            t.decode,
            t.extract,
            t.distance,
            t.cluster,
            t.render,
            r.total_s,
            reference,
            r.total_s / reference
        ));
    }
    out
}

/// Whether frame `i` of `n` belongs to the minority mode of the synthetic
/// fixture: the second and eighth tenths of the timeline.
pub fn in_minority_mode(i: usize, n: usize) -> bool {
    let tenth = |t: usize| t * n / 10;
    (tenth(2)..tenth(3)).contains(&i) || (tenth(7)..tenth(8)).contains(&i)
}

pub const SYNTHETIC_CONV_SHAPE: (usize, usize, usize) = (2, 2, 8);

/// Two-mode fixture of `2 x 2 x 8` activation grids. Majority-mode frames fire
/// channels 0..4 at the top-left cell, minority-mode frames channels 4..8 at the
/// bottom-right cell, over small uniform noise.
pub fn synthetic_fixture(n_frames: usize, seed: u64) -> MockBackend {
    let (h, w, c) = SYNTHETIC_CONV_SHAPE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n_frames)
        .map(|i| {
            let mut row: Vec<f32> = (0..h * w * c).map(|_| rng.gen_range(0.0..0.1)).collect();
            let (cell, channels) = if in_minority_mode(i, n_frames) {
                ((h - 1) * w + (w - 1), c / 2..c)
            } else {
                (0, 0..c / 2)
            };
            for ch in channels {
                row[cell * c + ch] += 2.0;
            }
            row
        })
        .collect();
    MockBackend::from_rows(rows, Some(SYNTHETIC_CONV_SHAPE)).expect("rows share the declared shape")
}

/// Small solid frames with a slowly drifting color.
pub fn synthetic_frames(n: usize, width: u32, height: u32) -> Vec<Frame> {
    (0..n)
        .map(|i| {
            let t = i as f64 / n.max(1) as f64;
            let mut f = Frame::solid(
                i,
                width,
                height,
                [(40.0 + 200.0 * t) as u8, (200.0 - 150.0 * t) as u8, 90],
            );
            f.timestamp_s = i as f64;
            f
        })
        .collect()
}
