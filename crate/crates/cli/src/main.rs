//! `vidsum`: storyboards of representative key frames for long videos.

mod commands;
mod interrupt;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vidsum_core::{ErrorClass, Method};

#[derive(Parser, Debug)]
#[command(name = "vidsum", version)]
#[command(about = "Summarize long videos into storyboards of key frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pick key frames, render the collage and write the JSON sidecar
    Summarize(SummarizeArgs),
    /// FID between all frames and storyboards of several sizes, as CSV
    Eval(EvalArgs),
    /// Print the stage timings of a saved run report
    Report(ReportArgs),
    /// FID curve and runtime comparison on a synthetic fixture or a model
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct SourceArgs {
    /// Video file, directory of PNG/JPEG frames, or `-` for raw RGB24 frames on stdin
    #[arg(long, short = 'i', env = "VIDSUM_INPUT", value_name = "PATH")]
    pub input: PathBuf,

    /// Frames per second kept from the source
    #[arg(long, env = "VIDSUM_FPS", default_value_t = 1.0)]
    pub fps: f64,

    /// Frame rate of the source. Probed for video files; defaults to --fps for
    /// directories and raw pipes
    #[arg(long, env = "VIDSUM_NATIVE_FPS")]
    pub native_fps: Option<f64>,

    /// Frame size of raw input, WIDTHxHEIGHT
    #[arg(long, env = "VIDSUM_RAW_SIZE", value_parser = parse_size, value_name = "WxH")]
    pub raw_size: Option<(u32, u32)>,
}

#[derive(Args, Debug)]
pub struct BackendArgs {
    /// ONNX model with a 2048-wide pooled output and a final conv output
    #[arg(long, env = "VIDSUM_MODEL", value_name = "PATH")]
    pub model: Option<PathBuf>,

    /// Expected SHA-256 of the model file
    #[arg(long, env = "VIDSUM_MODEL_SHA256", value_name = "HEX")]
    pub model_sha256: Option<String>,

    /// Name of the pooled latent output
    #[arg(long, env = "VIDSUM_POOLED_OUTPUT", default_value = vidsum_core::features::DEFAULT_POOLED_OUTPUT)]
    pub pooled_output: String,

    /// Name of the final convolutional output
    #[arg(long, env = "VIDSUM_CONV_OUTPUT", default_value = vidsum_core::features::DEFAULT_CONV_OUTPUT)]
    pub conv_output: String,

    /// CSV of per-frame descriptors used instead of a model
    #[arg(long, env = "VIDSUM_MOCK_FEATURES", value_name = "CSV", conflicts_with = "model")]
    pub mock_features: Option<PathBuf>,
}

impl BackendArgs {
    pub fn is_set(&self) -> bool {
        self.model.is_some() || self.mock_features.is_some()
    }
}

#[derive(Args, Debug)]
pub struct SummarizeArgs {
    #[command(flatten)]
    pub source: SourceArgs,

    #[command(flatten)]
    pub backend: BackendArgs,

    /// Collage PNG; the sidecar is written next to it with a .json extension
    #[arg(long, short = 'o', env = "VIDSUM_OUTPUT", default_value = "storyboard.png")]
    pub output: PathBuf,

    #[arg(long, short = 'm', env = "VIDSUM_METHOD", default_value = "time", value_parser = parse_method)]
    pub method: Method,

    /// Number of key frames
    #[arg(long, short = 'n', env = "VIDSUM_NFRAMES", default_value_t = 16)]
    pub nframes: usize,

    /// Weight of the temporal term blended into feature distances, in [0, 1]
    #[arg(long, env = "VIDSUM_LAMBDA", default_value_t = 0.0)]
    pub lambda: f64,

    /// Collage tile size, WIDTHxHEIGHT or a single number for square tiles
    #[arg(long, env = "VIDSUM_TILE_SIZE", default_value = "256", value_parser = parse_size)]
    pub tile_size: (u32, u32),

    /// Also write a JSON run report with stage timings
    #[arg(long, env = "VIDSUM_REPORT", value_name = "PATH")]
    pub report: Option<PathBuf>,

    /// Shuffle clustering tie-breaks with this seed
    #[arg(long, env = "VIDSUM_SEED")]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: SourceArgs,

    #[command(flatten)]
    pub backend: BackendArgs,

    /// Comma-separated methods
    #[arg(long, env = "VIDSUM_METHODS", value_delimiter = ',', default_value = "time,inception,uid,scda", value_parser = parse_method)]
    pub methods: Vec<Method>,

    /// Comma-separated storyboard sizes
    #[arg(long, env = "VIDSUM_SIZES", value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,

    #[arg(long, env = "VIDSUM_LAMBDA", default_value_t = 0.0)]
    pub lambda: f64,

    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,

    /// CSV destination; standard output when absent
    #[arg(long, env = "VIDSUM_EVAL_OUT", value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run report written by `summarize --report`
    #[arg(value_name = "REPORT")]
    pub run: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Number of frames, i.e. seconds of video at 1 fps
    #[arg(long, default_value_t = 3600)]
    pub frames: usize,

    #[arg(long, value_delimiter = ',', default_value = "time,inception,uid,scda", value_parser = parse_method)]
    pub methods: Vec<Method>,

    /// Storyboard sizes of the FID curve; the first one is used for timing
    #[arg(long, value_delimiter = ',', default_value = "16,2,4,8,32,64")]
    pub sizes: Vec<usize>,

    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,

    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,

    /// Seed of the synthetic two-mode fixture
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Run the model on the synthetic frames instead of the fixture
    #[arg(long, env = "VIDSUM_MODEL", value_name = "PATH")]
    pub model: Option<PathBuf>,

    #[arg(long, env = "VIDSUM_MODEL_SHA256", value_name = "HEX")]
    pub model_sha256: Option<String>,

    /// Directory receiving fid_curve.csv, fid_curve.md, timing.md and timing.json
    #[arg(long, default_value = "bench-out")]
    pub out_dir: PathBuf,

    #[arg(long, conflicts_with = "timing_only")]
    pub fid_only: bool,

    #[arg(long)]
    pub timing_only: bool,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

/// `640x480` or `256` (square).
fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let dim = |v: &str| -> Result<u32, String> {
        match v.trim().parse::<u32>() {
            Ok(0) | Err(_) => Err(format!("{v:?} is not a positive integer")),
            Ok(n) => Ok(n),
        }
    };
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Ok((dim(w)?, dim(h)?)),
        None => dim(s).map(|n| (n, n)),
    }
}

/// Bad flag combination or value, reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_status(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<vidsum_core::Error>() {
        Some(vidsum_core::Error::Interrupted) => 130,
        Some(e) => match e.class() {
            ErrorClass::Usage => 2,
            ErrorClass::Source => 3,
            ErrorClass::Model => 4,
            ErrorClass::Other => 1,
        },
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Summarize(args) => commands::summarize(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::Report(args) => commands::report(&args),
        Command::Bench(args) => commands::bench(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_status(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn sizes() {
        assert_eq!(parse_size("640x480"), Ok((640, 480)));
        assert_eq!(parse_size("256"), Ok((256, 256)));
        assert!(parse_size("0x4").is_err());
        assert!(parse_size("ax4").is_err());
    }

    #[test]
    fn error_classes_map_to_statuses() {
        let status = |e: vidsum_core::Error| exit_status(&anyhow::Error::new(e));
        assert_eq!(status(vidsum_core::Error::InvalidLambda(2.0)), 2);
        assert_eq!(status(vidsum_core::Error::InvalidSource("x".into())), 3);
        assert_eq!(status(vidsum_core::Error::ModelLoad("x".into())), 4);
        assert_eq!(status(vidsum_core::Error::EmptyStoryboard), 1);
        assert_eq!(status(vidsum_core::Error::Interrupted), 130);
        assert_eq!(exit_status(&anyhow::Error::new(UsageError("x".into()))), 2);
    }
}
