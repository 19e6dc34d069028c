//! Frame sources: video files (through an external decoder), frame directories
//! and raw RGB pipes, all decimated to a requested sampling rate.
//!
//! Video decoding shells out to an `ffmpeg`-compatible executable. The
//! reference invocation is
//!
//! ```text
//! ffprobe -v error -select_streams v:0 \
//!     -show_entries stream=width,height,r_frame_rate -of default=noprint_wrappers=1 <path>
//! ffmpeg -v error -nostdin -i <path> -map 0:v:0 -an -sn -f rawvideo -pix_fmt rgb24 pipe:1
//! ```
//!
//! The decoder binaries can be overridden through `VIDSUM_FFMPEG` and
//! `VIDSUM_FFPROBE`.

use std::fs;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Stdio};
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One decoded RGB frame.
#[derive(Clone, PartialEq)]
pub struct Frame {
    /// Position within the sampled sequence.
    pub index: usize,
    /// Frame number in the original source.
    pub source_index: usize,
    pub timestamp_s: f64,
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Frame")
            .field("index", &self.index)
            .field("source_index", &self.source_index)
            .field("timestamp_s", &self.timestamp_s)
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Frame {
    /// Builds a frame from a row-major RGB buffer of exactly `width * height * 3` bytes.
    pub fn new(
        index: usize,
        source_index: usize,
        timestamp_s: f64,
        width: u32,
        height: u32,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ShapeMismatch(format!(
                "frame must be at least 1x1, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "frame {width}x{height} needs {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            index,
            source_index,
            timestamp_s,
            width,
            height,
            pixels,
        })
    }

    /// Solid-color frame, mostly useful for tests and synthetic sources.
    pub fn solid(index: usize, width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self {
            index,
            source_index: index,
            timestamp_s: 0.0,
            width,
            height,
            pixels,
        }
    }

    pub fn from_image(index: usize, source_index: usize, timestamp_s: f64, img: image::RgbImage) -> Self {
        let (width, height) = img.dimensions();
        Self {
            index,
            source_index,
            timestamp_s,
            width,
            height,
            pixels: img.into_raw(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn to_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("frame buffer length checked at construction")
    }

    /// Returns a copy scaled down (aspect preserved) to fit inside `max_w` x `max_h`.
    /// Frames that already fit are returned unchanged.
    pub fn thumbnail(&self, max_w: u32, max_h: u32) -> Frame {
        if self.width <= max_w && self.height <= max_h {
            return self.clone();
        }
        let (w, h) = fit_within(self.width, self.height, max_w, max_h);
        let img = image::imageops::resize(
            &self.to_image(),
            w,
            h,
            image::imageops::FilterType::Triangle,
        );
        Frame::from_image(self.index, self.source_index, self.timestamp_s, img)
    }
}

/// Largest size with the aspect ratio of `w` x `h` that fits in `max_w` x `max_h`.
pub(crate) fn fit_within(w: u32, h: u32, max_w: u32, max_h: u32) -> (u32, u32) {
    let scale = f64::min(max_w as f64 / w as f64, max_h as f64 / h as f64);
    let fw = ((w as f64 * scale).round() as u32).clamp(1, max_w);
    let fh = ((h as f64 * scale).round() as u32).clamp(1, max_h);
    (fw, fh)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceKind {
    VideoFile,
    FrameDirectory,
    RawPipe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub kind: SourceKind,
    /// Filesystem path; `-` means standard input for [`SourceKind::RawPipe`].
    pub path: PathBuf,
    /// Required for directories and raw pipes, probed for video files when absent.
    pub native_fps: Option<f64>,
    pub sample_fps: f64,
    /// Frame size of a raw pipe, `(width, height)`.
    pub raw_size: Option<(u32, u32)>,
}

impl SourceSpec {
    /// Picks the source kind from the path: `-` is a raw pipe on stdin, directories
    /// are frame directories and anything else is treated as a video file.
    pub fn infer(path: impl Into<PathBuf>, sample_fps: f64) -> Self {
        let path = path.into();
        let kind = if path.as_os_str() == "-" {
            SourceKind::RawPipe
        } else if path.is_dir() {
            SourceKind::FrameDirectory
        } else {
            SourceKind::VideoFile
        };
        Self {
            kind,
            path,
            native_fps: None,
            sample_fps,
            raw_size: None,
        }
    }
}

/// Ordered, lazily-evaluated sequence of frames.
pub struct FrameStream {
    inner: Box<dyn Iterator<Item = Result<Frame>> + Send>,
    native_fps: f64,
}

impl FrameStream {
    pub fn new<I>(frames: I, native_fps: f64) -> Self
    where
        I: Iterator<Item = Result<Frame>> + Send + 'static,
    {
        Self {
            inner: Box::new(frames),
            native_fps,
        }
    }

    /// Wraps already-decoded frames; `index` and `source_index` are taken as given.
    pub fn from_frames(frames: Vec<Frame>, native_fps: f64) -> Self {
        Self::new(frames.into_iter().map(Ok), native_fps)
    }

    pub fn native_fps(&self) -> f64 {
        self.native_fps
    }

    /// Moves production onto a dedicated thread feeding a bounded, ordered queue.
    pub fn prefetch(self, capacity: usize) -> FrameStream {
        let native_fps = self.native_fps;
        let (tx, rx) = mpsc::sync_channel(capacity.max(1));
        thread::spawn(move || {
            for item in self {
                let stop = item.is_err();
                if tx.send(item).is_err() || stop {
                    break;
                }
            }
        });
        FrameStream::new(rx.into_iter(), native_fps)
    }
}

impl Iterator for FrameStream {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        self.inner.next()
    }
}

/// Opens a source and returns its frames decimated to `spec.sample_fps`.
pub fn open_source(spec: &SourceSpec) -> Result<FrameStream> {
    if !(spec.sample_fps > 0.0 && spec.sample_fps.is_finite()) {
        return Err(Error::InvalidSource(format!(
            "sample_fps must be positive, got {}",
            spec.sample_fps
        )));
    }
    match spec.kind {
        SourceKind::FrameDirectory => {
            let native = require_native_fps(spec)?;
            open_directory(&spec.path, native, spec.sample_fps)
        }
        SourceKind::RawPipe => {
            let native = require_native_fps(spec)?;
            let (w, h) = spec.raw_size.ok_or_else(|| {
                Error::InvalidSource("raw pipe needs the frame width and height".into())
            })?;
            check_rates(native, spec.sample_fps)?;
            let reader: Box<dyn Read + Send> = if spec.path.as_os_str() == "-" {
                Box::new(io::stdin())
            } else {
                Box::new(fs::File::open(&spec.path).map_err(|e| unreadable(&spec.path, e))?)
            };
            let raw = RawFrameReader::new(reader, w, h, native, spec.path.clone())?;
            sample_frames(FrameStream::new(raw, native), native, spec.sample_fps)
        }
        SourceKind::VideoFile => {
            let decoder = Decoder::from_env();
            let probe = decoder.probe(&spec.path)?;
            let native = spec.native_fps.unwrap_or(probe.fps);
            check_rates(native, spec.sample_fps)?;
            let frames = decoder.decode(&spec.path, probe.width, probe.height, native)?;
            sample_frames(FrameStream::new(frames, native), native, spec.sample_fps)
        }
    }
}

fn require_native_fps(spec: &SourceSpec) -> Result<f64> {
    spec.native_fps.ok_or_else(|| {
        Error::InvalidSource(format!(
            "{:?} sources need an explicit native frame rate",
            spec.kind
        ))
    })
}

fn check_rates(native_fps: f64, sample_fps: f64) -> Result<()> {
    if !(native_fps > 0.0 && native_fps.is_finite()) {
        return Err(Error::InvalidSource(format!(
            "native_fps must be positive, got {native_fps}"
        )));
    }
    if !(sample_fps > 0.0 && sample_fps <= native_fps) {
        return Err(Error::InvalidSource(format!(
            "sample_fps {sample_fps} must lie in (0, {native_fps}]"
        )));
    }
    Ok(())
}

fn unreadable(path: &Path, reason: impl ToString) -> Error {
    Error::UnreadableSource {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Keeps source frames `k = round(m * native_fps / sample_fps)`, `m = 0, 1, 2, ...`,
/// rounding ties to even.
#[derive(Debug, Clone)]
pub struct Decimator {
    step: f64,
    m: u64,
    target: usize,
}

impl Decimator {
    pub fn new(native_fps: f64, sample_fps: f64) -> Self {
        Self {
            step: native_fps / sample_fps,
            m: 0,
            target: 0,
        }
    }

    fn target_for(&self, m: u64) -> usize {
        (m as f64 * self.step).round_ties_even() as usize
    }

    /// Whether the frame with this source index is kept. Source indices must be
    /// presented in increasing order.
    pub fn accept(&mut self, source_index: usize) -> bool {
        while self.target < source_index {
            self.m += 1;
            self.target = self.target_for(self.m);
        }
        if self.target == source_index {
            self.m += 1;
            self.target = self.target_for(self.m);
            true
        } else {
            false
        }
    }
}

/// Decimates `stream` and renumbers `index` from zero.
pub fn sample_frames(stream: FrameStream, native_fps: f64, sample_fps: f64) -> Result<FrameStream> {
    check_rates(native_fps, sample_fps)?;
    let mut decimator = Decimator::new(native_fps, sample_fps);
    let mut next_index = 0usize;
    let frames = stream.filter_map(move |item| match item {
        Ok(mut frame) => {
            if decimator.accept(frame.source_index) {
                frame.index = next_index;
                next_index += 1;
                Some(Ok(frame))
            } else {
                None
            }
        }
        Err(e) => Some(Err(e)),
    });
    Ok(FrameStream::new(frames, native_fps))
}

/// Image files of a frame directory in temporal (lexicographic) order.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| unreadable(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| unreadable(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            .unwrap_or(false);
        if is_image && path.is_file() {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(unreadable(dir, "no PNG or JPEG frames found"));
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

fn open_directory(dir: &Path, native_fps: f64, sample_fps: f64) -> Result<FrameStream> {
    check_rates(native_fps, sample_fps)?;
    let files = list_frame_files(dir)?;
    let mut decimator = Decimator::new(native_fps, sample_fps);
    let selected: Vec<(usize, PathBuf)> = files
        .into_iter()
        .enumerate()
        .filter(|(k, _)| decimator.accept(*k))
        .collect();

    let mut dims: Option<(u32, u32)> = None;
    let frames = selected
        .into_iter()
        .enumerate()
        .map(move |(index, (source_index, path))| {
            let img = image::open(&path).map_err(|e| unreadable(&path, e))?.to_rgb8();
            let got = img.dimensions();
            match dims {
                None => dims = Some(got),
                Some(expected) if expected != got => {
                    return Err(Error::InconsistentDimensions {
                        path: path.clone(),
                        expected,
                        got,
                    })
                }
                _ => {}
            }
            Ok(Frame::from_image(
                index,
                source_index,
                source_index as f64 / native_fps,
                img,
            ))
        });
    Ok(FrameStream::new(frames, native_fps))
}

/// Splits a headerless byte stream into `width * height * 3`-byte RGB frames.
pub struct RawFrameReader<R> {
    reader: R,
    width: u32,
    height: u32,
    native_fps: f64,
    next_source: usize,
    label: PathBuf,
    done: bool,
}

impl<R: Read> RawFrameReader<R> {
    pub fn new(reader: R, width: u32, height: u32, native_fps: f64, label: PathBuf) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidSource(format!(
                "raw frame size must be at least 1x1, got {width}x{height}"
            )));
        }
        Ok(Self {
            reader,
            width,
            height,
            native_fps,
            next_source: 0,
            label,
            done: false,
        })
    }

    fn read_frame(&mut self) -> Result<Option<Vec<u8>>> {
        let size = self.width as usize * self.height as usize * 3;
        let mut buf = vec![0u8; size];
        let mut filled = 0;
        while filled < size {
            match self.reader.read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(unreadable(&self.label, e)),
            }
        }
        match filled {
            0 => Ok(None),
            n if n == size => Ok(Some(buf)),
            n => Err(unreadable(
                &self.label,
                format!("truncated frame: {n} of {size} bytes"),
            )),
        }
    }
}

impl<R: Read> Iterator for RawFrameReader<R> {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_frame() {
            Ok(Some(pixels)) => {
                let k = self.next_source;
                self.next_source += 1;
                Some(Frame::new(
                    k,
                    k,
                    k as f64 / self.native_fps,
                    self.width,
                    self.height,
                    pixels,
                ))
            }
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeInfo {
    pub width: u32,
    pub height: u32,
    pub fps: f64,
}

/// External decoder executables.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub ffmpeg: PathBuf,
    pub ffprobe: PathBuf,
}

impl Decoder {
    pub fn from_env() -> Self {
        Self {
            ffmpeg: std::env::var_os("VIDSUM_FFMPEG")
                .map(PathBuf::from)
                .unwrap_or_else(|| "ffmpeg".into()),
            ffprobe: std::env::var_os("VIDSUM_FFPROBE")
                .map(PathBuf::from)
                .unwrap_or_else(|| "ffprobe".into()),
        }
    }

    pub fn probe(&self, path: &Path) -> Result<ProbeInfo> {
        if !path.exists() {
            return Err(unreadable(path, "no such file"));
        }
        let output = Command::new(&self.ffprobe)
            .args([
                "-v",
                "error",
                "-select_streams",
                "v:0",
                "-show_entries",
                "stream=width,height,r_frame_rate",
                "-of",
                "default=noprint_wrappers=1",
            ])
            .arg(path)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| unreadable(path, format!("cannot run {}: {e}", self.ffprobe.display())))?;
        if !output.status.success() {
            return Err(unreadable(
                path,
                format!("probe failed: {}", String::from_utf8_lossy(&output.stderr).trim()),
            ));
        }
        parse_probe(&String::from_utf8_lossy(&output.stdout)).ok_or_else(|| {
            unreadable(path, "probe output lacks width, height or frame rate")
        })
    }

    pub fn decode(&self, path: &Path, width: u32, height: u32, native_fps: f64) -> Result<DecoderFrames> {
        let mut child = Command::new(&self.ffmpeg)
            .args(["-v", "error", "-nostdin", "-i"])
            .arg(path)
            .args([
                "-map", "0:v:0", "-an", "-sn", "-f", "rawvideo", "-pix_fmt", "rgb24", "pipe:1",
            ])
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| unreadable(path, format!("cannot run {}: {e}", self.ffmpeg.display())))?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let reader = RawFrameReader::new(
            BufReader::new(stdout),
            width,
            height,
            native_fps,
            path.to_path_buf(),
        )?;
        Ok(DecoderFrames {
            child: Some(child),
            reader,
            path: path.to_path_buf(),
        })
    }
}

pub(crate) fn parse_probe(text: &str) -> Option<ProbeInfo> {
    let mut width = None;
    let mut height = None;
    let mut fps = None;
    for line in text.lines() {
        let Some((key, value)) = line.trim().split_once('=') else {
            continue;
        };
        match key {
            "width" => width = value.parse().ok(),
            "height" => height = value.parse().ok(),
            "r_frame_rate" => {
                fps = match value.split_once('/') {
                    Some((n, d)) => {
                        let (n, d): (f64, f64) = (n.parse().ok()?, d.parse().ok()?);
                        (d != 0.0).then(|| n / d)
                    }
                    None => value.parse().ok(),
                }
            }
            _ => {}
        }
    }
    let fps = fps.filter(|f: &f64| *f > 0.0)?;
    Some(ProbeInfo {
        width: width.filter(|w| *w > 0)?,
        height: height.filter(|h| *h > 0)?,
        fps,
    })
}

/// Frames read from a running decoder process.
pub struct DecoderFrames {
    child: Option<Child>,
    reader: RawFrameReader<BufReader<ChildStdout>>,
    path: PathBuf,
}

impl Iterator for DecoderFrames {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.reader.next() {
            Some(item) => Some(item),
            None => {
                let mut child = self.child.take()?;
                match child.wait() {
                    Ok(status) if status.success() => None,
                    Ok(status) => Some(Err(unreadable(
                        &self.path,
                        format!("decoder exited with {status}"),
                    ))),
                    Err(e) => Some(Err(unreadable(&self.path, e))),
                }
            }
        }
    }
}

impl Drop for DecoderFrames {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
