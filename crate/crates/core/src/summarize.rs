//! The four summarization methods behind one entry point.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::clustering::{kmedoids_with, PamOptions};
use crate::error::{Error, Result};
use crate::features::{gaussian_summary, scda_descriptor, ConvMap, FeatureBackend, LatentVector};
use crate::ingest::{Frame, FrameStream};
use crate::metrics::{blended_matrix, distance_matrix, Descriptor, Metric};
use crate::report::{StageTimings, Stopwatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Time,
    Inception,
    Uid,
    Scda,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Time, Method::Inception, Method::Uid, Method::Scda];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Time => "time",
            Method::Inception => "inception",
            Method::Uid => "uid",
            Method::Scda => "scda",
        }
    }

    pub fn needs_backend(self) -> bool {
        self != Method::Time
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown method {s:?} (expected time, inception, uid or scda)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummarizerConfig {
    pub method: Method,
    pub n_clusters: usize,
    pub time_smoothing_lambda: f64,
    pub sample_fps: f64,
    pub model_path: Option<PathBuf>,
    /// Tie-shuffling seed for clustering; `None` keeps lowest-index tie breaking.
    pub seed: Option<u64>,
}

impl SummarizerConfig {
    pub fn new(method: Method, n_clusters: usize) -> Self {
        Self {
            method,
            n_clusters,
            time_smoothing_lambda: 0.0,
            sample_fps: 1.0,
            model_path: None,
            seed: None,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.time_smoothing_lambda = lambda;
        self
    }
}

/// Key frames and per-frame cluster labels. Serializes to the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Storyboard {
    pub method: Method,
    pub n_frames: usize,
    pub n_clusters: usize,
    pub lambda: f64,
    pub key_frames: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Storyboard {
    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ShapeMismatch(format!("storyboard: {msg}")));
        if self.labels.len() != self.n_frames {
            return bad(format!("{} labels for {} frames", self.labels.len(), self.n_frames));
        }
        if self.key_frames.len() != self.n_clusters {
            return bad(format!("{} key frames for {} clusters", self.key_frames.len(), self.n_clusters));
        }
        if !self.key_frames.windows(2).all(|w| w[0] < w[1]) {
            return bad("key frames not strictly ascending".into());
        }
        for (c, &k) in self.key_frames.iter().enumerate() {
            if k >= self.n_frames || self.labels[k] != c {
                return bad(format!("key frame {k} does not belong to its own cluster {c}"));
            }
        }
        if self.labels.iter().any(|&l| l >= self.n_clusters) {
            return bad("label out of range".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Equal temporal segments with the lower-median frame of each as key frame.
pub fn summarize_time(n_frames: usize, n_clusters: usize) -> Result<Storyboard> {
    if n_clusters == 0 || n_clusters > n_frames {
        return Err(Error::TooFewFrames {
            n_frames,
            n_clusters,
        });
    }
    let bound = |k: usize| k * n_frames / n_clusters;
    let mut labels = Vec::with_capacity(n_frames);
    let mut key_frames = Vec::with_capacity(n_clusters);
    for k in 0..n_clusters {
        let (start, end) = (bound(k), bound(k + 1));
        key_frames.push(start + (end - start - 1) / 2);
        labels.extend(std::iter::repeat(k).take(end - start));
    }
    Ok(Storyboard {
        method: Method::Time,
        n_frames,
        n_clusters,
        lambda: 0.0,
        key_frames,
        labels,
    })
}

/// Descriptors extracted for every sampled frame, in frame order.
#[derive(Debug, Clone, Default)]
pub struct FrameFeatures {
    pub latents: Vec<LatentVector>,
    pub conv_maps: Vec<ConvMap>,
}

impl FrameFeatures {
    pub fn n_frames(&self) -> usize {
        self.latents.len().max(self.conv_maps.len())
    }

    /// Extracts what `methods` need from `frames`; latents are always included.
    pub fn extract(frames: &[Frame], backend: &dyn FeatureBackend, methods: &[Method]) -> Result<Self> {
        let mut out = Self::default();
        out.extend(frames, backend, methods.contains(&Method::Scda))?;
        Ok(out)
    }

    fn extend(&mut self, frames: &[Frame], backend: &dyn FeatureBackend, conv: bool) -> Result<()> {
        if conv {
            let (latents, maps) = backend.extract_both(frames)?;
            self.latents.extend(latents);
            self.conv_maps.extend(maps);
        } else {
            self.latents.extend(backend.extract_latent(frames)?);
        }
        Ok(())
    }

    pub fn descriptors(&self, method: Method) -> Result<(Vec<Descriptor>, Metric)> {
        match method {
            Method::Time => Err(Error::MissingBackend("time")),
            Method::Inception => Ok((
                self.latents.iter().cloned().map(Descriptor::Latent).collect(),
                Metric::L2,
            )),
            Method::Uid => Ok((
                self.latents
                    .iter()
                    .map(|v| Descriptor::Gaussian(gaussian_summary(v)))
                    .collect(),
                Metric::UnivariateWasserstein,
            )),
            Method::Scda => {
                if self.conv_maps.len() != self.n_frames() {
                    return Err(Error::ShapeMismatch("scda needs a conv map for every frame".into()));
                }
                Ok((
                    self.conv_maps
                        .iter()
                        .map(|m| Descriptor::Scda(scda_descriptor(m)))
                        .collect(),
                    Metric::L2,
                ))
            }
        }
    }
}

/// Clusters precomputed features with k-medoids; medoids become key frames.
pub fn summarize_features(features: &FrameFeatures, cfg: &SummarizerConfig) -> Result<Storyboard> {
    let mut timings = StageTimings::default();
    summarize_features_timed(features, cfg, &mut timings)
}

fn summarize_features_timed(
    features: &FrameFeatures,
    cfg: &SummarizerConfig,
    timings: &mut StageTimings,
) -> Result<Storyboard> {
    if !cfg.method.needs_backend() {
        return Err(Error::MissingBackend("feature summarization"));
    }
    let n_frames = features.n_frames();
    if cfg.n_clusters == 0 || cfg.n_clusters > n_frames {
        return Err(Error::TooFewFrames {
            n_frames,
            n_clusters: cfg.n_clusters,
        });
    }
    if !(0.0..=1.0).contains(&cfg.time_smoothing_lambda) {
        return Err(Error::InvalidLambda(cfg.time_smoothing_lambda));
    }
    let mut distance = Stopwatch::default();
    let blended = distance.time(|| -> Result<_> {
        let (descriptors, metric) = features.descriptors(cfg.method)?;
        let d = distance_matrix(&descriptors, metric)?;
        blended_matrix(&d, cfg.time_smoothing_lambda)
    })?;
    timings.distance += distance.seconds();

    let mut cluster = Stopwatch::default();
    let clustering = cluster.time(|| {
        kmedoids_with(
            &blended,
            cfg.n_clusters,
            PamOptions {
                seed: cfg.seed,
                ..PamOptions::default()
            },
        )
    })?;
    timings.cluster += cluster.seconds();

    // medoids come back ascending, so cluster ids already follow key-frame order
    let board = Storyboard {
        method: cfg.method,
        n_frames,
        n_clusters: cfg.n_clusters,
        lambda: cfg.time_smoothing_lambda,
        key_frames: clustering.medoids,
        labels: clustering.labels,
    };
    debug_assert!(board.validate().is_ok());
    Ok(board)
}

/// Summarizes a frame stream. Feature methods need `backend`.
pub fn summarize(
    frames: FrameStream,
    cfg: &SummarizerConfig,
    backend: Option<&dyn FeatureBackend>,
) -> Result<Storyboard> {
    Ok(run_pipeline(frames, cfg, backend, &PipelineOptions::default())?.storyboard)
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineOptions<'a> {
    /// Bounding box of the frame copies kept for the collage.
    pub thumbnail_size: (u32, u32),
    pub batch_size: usize,
    /// Also extract latents for `Method::Time` (needed when the run is scored).
    pub keep_latents: bool,
    pub prefetch: usize,
    pub interrupt: Option<&'a AtomicBool>,
}

impl Default for PipelineOptions<'_> {
    fn default() -> Self {
        Self {
            thumbnail_size: (256, 256),
            batch_size: 16,
            keep_latents: false,
            prefetch: 32,
            interrupt: None,
        }
    }
}

pub struct PipelineOutput {
    pub storyboard: Storyboard,
    /// Downscaled copy of every sampled frame, in order.
    pub thumbnails: Vec<Frame>,
    pub features: Option<FrameFeatures>,
    pub timings: StageTimings,
}

impl PipelineOutput {
    pub fn key_frame_thumbnails(&self) -> Vec<Frame> {
        self.storyboard
            .key_frames
            .iter()
            .map(|&k| self.thumbnails[k].clone())
            .collect()
    }
}

/// Frames decoded from a stream, with features when a backend was supplied.
pub struct ExtractedStream {
    /// Downscaled copy of every sampled frame, in order.
    pub thumbnails: Vec<Frame>,
    pub features: Option<FrameFeatures>,
    pub timings: StageTimings,
}

/// Decodes `frames`, keeping thumbnails and running `backend` batch by batch.
/// Conv maps are extracted alongside latents when `conv` is set.
pub fn extract_stream(
    frames: FrameStream,
    backend: Option<&dyn FeatureBackend>,
    conv: bool,
    opts: &PipelineOptions<'_>,
) -> Result<ExtractedStream> {
    let interrupted = || opts.interrupt.is_some_and(|f| f.load(Ordering::Relaxed));

    let mut decode = Stopwatch::default();
    let mut extract = Stopwatch::default();
    let mut thumbnails = Vec::new();
    let mut features = FrameFeatures::default();
    let mut batch: Vec<Frame> = Vec::with_capacity(opts.batch_size);
    let (tw, th) = opts.thumbnail_size;

    let mut stream = frames.prefetch(opts.prefetch);
    loop {
        if interrupted() {
            return Err(Error::Interrupted);
        }
        let next = decode.time(|| stream.next());
        let done = next.is_none();
        if let Some(frame) = next {
            let frame = frame?;
            thumbnails.push(decode.time(|| frame.thumbnail(tw, th)));
            if backend.is_some() {
                batch.push(frame);
            }
        }
        if let Some(b) = backend {
            if batch.len() >= opts.batch_size.max(1) || (done && !batch.is_empty()) {
                extract.time(|| features.extend(&batch, b, conv))?;
                batch.clear();
            }
        }
        if done {
            break;
        }
    }
    if interrupted() {
        return Err(Error::Interrupted);
    }
    Ok(ExtractedStream {
        thumbnails,
        features: backend.map(|_| features),
        timings: StageTimings {
            decode: decode.seconds(),
            extract: extract.seconds(),
            ..StageTimings::default()
        },
    })
}

/// Decode, extract, build distances and cluster, with per-stage timings.
pub fn run_pipeline(
    frames: FrameStream,
    cfg: &SummarizerConfig,
    backend: Option<&dyn FeatureBackend>,
    opts: &PipelineOptions<'_>,
) -> Result<PipelineOutput> {
    let wants_features = cfg.method.needs_backend() || opts.keep_latents;
    let backend = match (wants_features, backend) {
        (true, None) => return Err(Error::MissingBackend(cfg.method.as_str())),
        (true, Some(b)) => Some(b),
        (false, _) => None,
    };
    let ExtractedStream {
        thumbnails,
        features,
        mut timings,
    } = extract_stream(frames, backend, cfg.method == Method::Scda, opts)?;

    let n_frames = thumbnails.len();
    let storyboard = match (cfg.method, &features) {
        (Method::Time, _) => {
            let mut cluster = Stopwatch::default();
            let board = cluster.time(|| summarize_time(n_frames, cfg.n_clusters))?;
            timings.cluster = cluster.seconds();
            board
        }
        (_, Some(f)) => summarize_features_timed(f, cfg, &mut timings)?,
        (_, None) => return Err(Error::MissingBackend(cfg.method.as_str())),
    };
    if opts.interrupt.is_some_and(|f| f.load(Ordering::Relaxed)) {
        return Err(Error::Interrupted);
    }
    Ok(PipelineOutput {
        storyboard,
        thumbnails,
        features,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::MockBackend;

    fn frames(n: usize) -> FrameStream {
        FrameStream::from_frames((0..n).map(|i| Frame::solid(i, 4, 3, [i as u8, 0, 0])).collect(), 1.0)
    }

    #[test]
    fn time_ten_by_two() {
        let b = summarize_time(10, 2).unwrap();
        assert_eq!(b.key_frames, vec![2, 7]);
        assert_eq!(b.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        b.validate().unwrap();
    }

    #[test]
    fn time_ten_by_three() {
        let b = summarize_time(10, 3).unwrap();
        assert_eq!(b.key_frames, vec![1, 4, 7]);
        assert_eq!(b.labels, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 2]);
    }

    #[test]
    fn time_every_frame_a_key_frame() {
        let b = summarize_time(6, 6).unwrap();
        assert_eq!(b.key_frames, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn time_too_few_frames() {
        assert!(matches!(summarize_time(3, 4), Err(Error::TooFewFrames { .. })));
        assert!(matches!(summarize_time(3, 0), Err(Error::TooFewFrames { .. })));
    }

    #[test]
    fn time_segments_balanced_and_monotone() {
        for n in 1..60 {
            for k in 1..=n {
                let b = summarize_time(n, k).unwrap();
                b.validate().unwrap();
                assert!(b.labels.windows(2).all(|w| w[0] <= w[1]));
                let mut sizes = vec![0usize; k];
                b.labels.iter().for_each(|&l| sizes[l] += 1);
                let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
                assert!(hi - lo <= 1);
            }
        }
    }

    #[test]
    fn method_parsing() {
        assert_eq!("UID".parse::<Method>().unwrap(), Method::Uid);
        assert!("vgg".parse::<Method>().is_err());
        assert_eq!(serde_json::to_string(&Method::Scda).unwrap(), "\"scda\"");
    }

    #[test]
    fn two_tight_pairs() {
        let mock = MockBackend::parse("0,0\n0.1,0\n5,5\n5.1,5\n").unwrap();
        let cfg = SummarizerConfig::new(Method::Inception, 2);
        let b = summarize(frames(4), &cfg, Some(&mock)).unwrap();
        assert_eq!(b.labels, vec![0, 0, 1, 1]);
        // either member of a pair is an optimal medoid; compare against the exhaustive optimum
        let (descs, metric) = FrameFeatures::extract(
            &(0..4).map(|i| Frame::solid(i, 1, 1, [0, 0, 0])).collect::<Vec<_>>(),
            &mock,
            &[Method::Inception],
        )
        .unwrap()
        .descriptors(Method::Inception)
        .unwrap();
        let d = blended_matrix(&distance_matrix(&descs, metric).unwrap(), 0.0).unwrap();
        let oracle = crate::clustering::brute_force_kmedoids(&d, 2).unwrap();
        let got = crate::clustering::Clustering::assign(&d, &b.key_frames);
        assert!((got.cost - oracle.cost).abs() < 1e-9);
        assert!(b.key_frames[0] < 2 && b.key_frames[1] >= 2);
    }

    #[test]
    fn k_equals_n_selects_everything() {
        let mock = MockBackend::parse("0\n3\n1\n").unwrap();
        let b = summarize(frames(3), &SummarizerConfig::new(Method::Uid, 3), Some(&mock)).unwrap();
        assert_eq!(b.key_frames, vec![0, 1, 2]);
    }

    #[test]
    fn lambda_one_ignores_features() {
        let a = MockBackend::parse("0\n9\n1\n8\n2\n7\n").unwrap();
        let b = MockBackend::parse("4\n4\n0\n1\n3\n3\n").unwrap();
        let cfg = SummarizerConfig::new(Method::Inception, 2).with_lambda(1.0);
        let sa = summarize(frames(6), &cfg, Some(&a)).unwrap();
        let sb = summarize(frames(6), &cfg, Some(&b)).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(sa.labels, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn feature_method_errors() {
        let mock = MockBackend::parse("0\n1\n").unwrap();
        let cfg = SummarizerConfig::new(Method::Inception, 3);
        assert!(matches!(
            summarize(frames(2), &cfg, Some(&mock)),
            Err(Error::TooFewFrames { .. })
        ));
        assert!(matches!(
            summarize(frames(2), &SummarizerConfig::new(Method::Inception, 1), None),
            Err(Error::MissingBackend(_))
        ));
        let bad = SummarizerConfig::new(Method::Inception, 1).with_lambda(2.0);
        assert!(matches!(summarize(frames(2), &bad, Some(&mock)), Err(Error::InvalidLambda(_))));
    }

    #[test]
    fn scda_through_mock_conv_maps() {
        // 1x2x1 maps; frames 0,1 have the same selected cell value, 2,3 another
        let mock = MockBackend::parse("# conv_shape=1x2x2\n1,0,0,0\n1,0,0,0\n0,0,0,1\n0,0,0,1\n").unwrap();
        let b = summarize(frames(4), &SummarizerConfig::new(Method::Scda, 2), Some(&mock)).unwrap();
        assert_eq!(b.labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn pipeline_keeps_thumbnails_and_timings() {
        let mock = MockBackend::parse(&"1\n".repeat(20)).unwrap();
        let out = run_pipeline(
            frames(20),
            &SummarizerConfig::new(Method::Time, 4),
            Some(&mock),
            &PipelineOptions {
                keep_latents: true,
                batch_size: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.thumbnails.len(), 20);
        assert_eq!(out.features.as_ref().unwrap().latents.len(), 20);
        assert_eq!(out.key_frame_thumbnails().len(), 4);
        assert!(out.timings.total() >= out.timings.max_stage());
    }

    #[test]
    fn pipeline_honours_interrupt() {
        let flag = AtomicBool::new(true);
        let opts = PipelineOptions {
            interrupt: Some(&flag),
            ..Default::default()
        };
        let r = run_pipeline(frames(5), &SummarizerConfig::new(Method::Time, 1), None, &opts);
        assert!(matches!(r, Err(Error::Interrupted)));
    }

    #[test]
    fn storyboard_json_field_order() {
        let json = serde_json::to_string(&summarize_time(4, 2).unwrap()).unwrap();
        assert_eq!(
            json,
            r#"{"method":"time","n_frames":4,"n_clusters":2,"lambda":0.0,"key_frames":[0,2],"labels":[0,0,1,1]}"#
        );
    }
}
