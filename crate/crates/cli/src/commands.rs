use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::info;
use tempfile::NamedTempFile;
use vidsum_core::bench::{
    fid_markdown, reference_runtime, run_fid_curve, run_timing, synthetic_fixture, synthetic_frames,
    timing_markdown, write_fid_csv, BenchBackend, BenchSpec,
};
use vidsum_core::eval::evaluate_storyboard;
use vidsum_core::features::{FeatureBackend, MockBackend, OnnxBackend, OnnxConfig};
use vidsum_core::ingest::{open_source, SourceKind, SourceSpec};
use vidsum_core::render::{encode_png, plan_layout, render_storyboard};
use vidsum_core::report::RunReport;
use vidsum_core::summarize::{extract_stream, run_pipeline, FrameFeatures, PipelineOptions};
use vidsum_core::{Error, Method, SummarizerConfig};

use crate::{interrupt, BackendArgs, BenchArgs, EvalArgs, ReportArgs, SourceArgs, SummarizeArgs, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidLambda(lambda).into());
    }
    Ok(())
}

fn source_spec(args: &SourceArgs) -> Result<SourceSpec> {
    if !(args.fps > 0.0 && args.fps.is_finite()) {
        return Err(usage(format!("--fps must be positive, got {}", args.fps)));
    }
    let mut spec = SourceSpec::infer(&args.input, args.fps);
    if spec.kind == SourceKind::VideoFile && args.raw_size.is_some() {
        spec.kind = SourceKind::RawPipe;
    }
    if spec.kind == SourceKind::RawPipe && args.raw_size.is_none() {
        return Err(usage("raw input needs --raw-size WIDTHxHEIGHT"));
    }
    spec.raw_size = args.raw_size;
    spec.native_fps = match spec.kind {
        SourceKind::VideoFile => args.native_fps,
        _ => Some(args.native_fps.unwrap_or(args.fps)),
    };
    Ok(spec)
}

fn load_model(path: &Path, sha256: Option<&str>, pooled: &str, conv: &str) -> Result<Box<dyn FeatureBackend>> {
    let mut cfg = OnnxConfig::new(path);
    cfg.expected_sha256 = sha256.map(str::to_owned);
    cfg.pooled_output = pooled.to_owned();
    cfg.conv_output = conv.to_owned();
    let backend = OnnxBackend::load(&cfg)?;
    info!("loaded {} (sha256 {})", path.display(), backend.sha256());
    Ok(Box::new(backend))
}

fn load_backend(args: &BackendArgs) -> Result<Option<Box<dyn FeatureBackend>>> {
    if let Some(path) = &args.mock_features {
        return Ok(Some(Box::new(MockBackend::from_csv(path)?)));
    }
    match &args.model {
        Some(path) => Ok(Some(load_model(
            path,
            args.model_sha256.as_deref(),
            &args.pooled_output,
            &args.conv_output,
        )?)),
        None => Ok(None),
    }
}

/// Output files written next to their targets and renamed into place together.
#[derive(Default)]
struct Staged {
    files: Vec<(NamedTempFile, PathBuf)>,
}

impl Staged {
    fn add(&mut self, target: &Path, bytes: &[u8]) -> Result<()> {
        let dir = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::Builder::new()
            .prefix(".vidsum-")
            .tempfile_in(dir)
            .with_context(|| format!("cannot create a file in {}", dir.display()))?;
        tmp.write_all(bytes)?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            fs::set_permissions(tmp.path(), fs::Permissions::from_mode(0o644))?;
        }
        self.files.push((tmp, target.to_path_buf()));
        Ok(())
    }

    fn commit(self) -> Result<()> {
        if interrupt::triggered() {
            return Err(Error::Interrupted.into());
        }
        for (tmp, target) in self.files {
            tmp.persist(&target)
                .with_context(|| format!("cannot write {}", target.display()))?;
        }
        Ok(())
    }
}

pub fn summarize(args: &SummarizeArgs) -> Result<()> {
    if args.nframes == 0 {
        return Err(usage("--nframes must be at least 1"));
    }
    check_lambda(args.lambda)?;
    if args.method.needs_backend() && !args.backend.is_set() {
        return Err(usage(format!(
            "--method {} needs --model or --mock-features",
            args.method
        )));
    }
    let png_path = args.output.clone();
    let sidecar_path = png_path.with_extension("json");
    if sidecar_path == png_path {
        return Err(usage("--output must not end in .json, the sidecar takes that name"));
    }
    if let Some(r) = &args.report {
        if *r == png_path || *r == sidecar_path {
            return Err(usage("--report must differ from the collage and sidecar paths"));
        }
    }

    let flag = interrupt::install();
    let backend = if args.method.needs_backend() || args.report.is_some() {
        load_backend(&args.backend)?
    } else {
        None
    };
    let spec = source_spec(&args.source)?;
    let stream = open_source(&spec)?;
    let cfg = SummarizerConfig {
        method: args.method,
        n_clusters: args.nframes,
        time_smoothing_lambda: args.lambda,
        sample_fps: args.source.fps,
        model_path: args.backend.model.clone(),
        seed: args.seed,
    };
    let opts = PipelineOptions {
        thumbnail_size: args.tile_size,
        keep_latents: args.report.is_some() && backend.is_some(),
        interrupt: Some(flag),
        ..PipelineOptions::default()
    };
    let out = run_pipeline(stream, &cfg, backend.as_deref(), &opts)?;
    let board = &out.storyboard;
    info!("{} frames, key frames {:?}", board.n_frames, board.key_frames);

    let mut timings = out.timings;
    let start = Instant::now();
    let (tile_w, tile_h) = args.tile_size;
    let layout = plan_layout(args.nframes, tile_w, tile_h)?;
    let png = encode_png(&render_storyboard(board, &out.key_frame_thumbnails(), &layout)?)?;
    timings.render = start.elapsed().as_secs_f64();

    let mut staged = Staged::default();
    staged.add(&png_path, &png)?;
    let mut sidecar = board.to_json()?;
    sidecar.push('\n');
    staged.add(&sidecar_path, sidecar.as_bytes())?;
    if let Some(report_path) = &args.report {
        let mut report = RunReport::new(args.method, board.n_frames, board.n_clusters, board.lambda, timings);
        if let Some(features) = &out.features {
            if board.key_frames.len() >= 2 {
                let all: Vec<&[f32]> = features.latents.iter().map(|v| v.values.as_slice()).collect();
                let key: Vec<&[f32]> = board.key_frames.iter().map(|&k| all[k]).collect();
                report.fid = Some(evaluate_storyboard(&all, &key)?);
            }
        }
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        staged.add(report_path, json.as_bytes())?;
    }
    staged.commit()?;

    println!("key frames {:?} of {} frames", board.key_frames, board.n_frames);
    println!("wrote {} and {}", png_path.display(), sidecar_path.display());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    if !args.backend.is_set() {
        return Err(usage("eval needs --model or --mock-features"));
    }
    if args.methods.is_empty() || args.sizes.is_empty() {
        return Err(usage("--methods and --sizes must not be empty"));
    }
    if let Some(s) = args.sizes.iter().find(|&&s| s < 2) {
        return Err(usage(format!("storyboard size {s} is too small to fit a Gaussian")));
    }
    check_lambda(args.lambda)?;

    let flag = interrupt::install();
    let backend = load_backend(&args.backend)?.expect("backend flags checked above");
    let stream = open_source(&source_spec(&args.source)?)?;
    let opts = PipelineOptions {
        thumbnail_size: (1, 1),
        interrupt: Some(flag),
        ..PipelineOptions::default()
    };
    let extracted = extract_stream(stream, Some(backend.as_ref()), args.methods.contains(&Method::Scda), &opts)?;
    let features = extracted.features.expect("backend supplied");
    let spec = BenchSpec {
        n_frames: features.n_frames(),
        methods: args.methods.clone(),
        sizes: args.sizes.clone(),
        backend: if args.backend.model.is_some() {
            BenchBackend::Model
        } else {
            BenchBackend::Mock
        },
        repetitions: args.repetitions,
        lambda: args.lambda,
    };
    let rows = run_fid_curve(&spec, &features)?;
    match &args.out {
        Some(path) => {
            let mut csv = Vec::new();
            write_fid_csv(&rows, &mut csv)?;
            let mut staged = Staged::default();
            staged.add(path, &csv)?;
            staged.commit()?;
        }
        None => write_fid_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&args.run)
        .map_err(|e| usage(format!("cannot read {}: {e}", args.run.display())))?;
    if text.trim().is_empty() {
        return Err(usage(format!("{} is empty", args.run.display())));
    }
    let run: RunReport = serde_json::from_str(&text)
        .map_err(|e| usage(format!("{} is not a run report: {e}", args.run.display())))?;
    if run.n_frames == 0 {
        return Err(usage("the run covers no frames"));
    }
    print!("{}", run.table());
    let reference = reference_runtime(run.method);
    println!(
        "reference  {:>12.1}  (one hour at 1 fps, measured/reference {:.4})",
        reference,
        run.total_s / reference
    );
    Ok(())
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    if args.frames == 0 || args.methods.is_empty() || args.sizes.is_empty() {
        return Err(usage("--frames, --methods and --sizes must not be empty"));
    }
    if !args.timing_only {
        if let Some(s) = args.sizes.iter().find(|&&s| s < 2) {
            return Err(usage(format!("storyboard size {s} is too small to fit a Gaussian")));
        }
    }
    check_lambda(args.lambda)?;
    let spec = BenchSpec {
        n_frames: args.frames,
        methods: args.methods.clone(),
        sizes: args.sizes.clone(),
        backend: if args.model.is_some() {
            BenchBackend::Model
        } else {
            BenchBackend::Mock
        },
        repetitions: args.repetitions,
        lambda: args.lambda,
    };
    spec.validate()?;
    let backend: Box<dyn FeatureBackend> = match &args.model {
        Some(path) => load_model(
            path,
            args.model_sha256.as_deref(),
            vidsum_core::features::DEFAULT_POOLED_OUTPUT,
            vidsum_core::features::DEFAULT_CONV_OUTPUT,
        )?,
        None => Box::new(synthetic_fixture(args.frames, args.seed)),
    };
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;

    if !args.timing_only {
        let frames = synthetic_frames(args.frames, 32, 24);
        let features = FrameFeatures::extract(&frames, backend.as_ref(), &args.methods)?;
        let rows = run_fid_curve(&spec, &features)?;
        let mut csv = Vec::new();
        write_fid_csv(&rows, &mut csv)?;
        fs::write(args.out_dir.join("fid_curve.csv"), csv)?;
        let md = fid_markdown(&rows);
        fs::write(args.out_dir.join("fid_curve.md"), &md)?;
        println!("{md}");
    }
    if !args.fid_only {
        let reports = run_timing(&spec, backend.as_ref())?;
        let md = timing_markdown(&reports);
        fs::write(args.out_dir.join("timing.md"), &md)?;
        fs::write(
            args.out_dir.join("timing.json"),
            serde_json::to_string_pretty(&reports)? + "\n",
        )?;
        println!("{md}");
    }
    Ok(())
}
