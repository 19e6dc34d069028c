//! ONNX feature extraction through a long-lived worker process.
//!
//! The worker is a small Python program (embedded in this crate) that runs the
//! graph with OpenCV's DNN module. Frames are preprocessed here and shipped as
//! little-endian `f32` batches over the worker's stdin; pooled latents and
//! channels-last conv grids come back on its stdout.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{preprocess, ConvMap, FeatureBackend, LatentVector, INPUT_SIZE, LATENT_DIM};
use crate::error::{Error, Result};
use crate::ingest::Frame;

const WORKER_SOURCE: &str = include_str!("onnx_worker.py");

pub const DEFAULT_POOLED_OUTPUT: &str = "avg_pool";
pub const DEFAULT_CONV_OUTPUT: &str = "mixed10";

/// Memory layout of the model's image input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputLayout {
    /// Read from the declared shape of the graph input.
    #[default]
    Auto,
    Nchw,
    Nhwc,
}

impl InputLayout {
    fn as_str(self) -> &'static str {
        match self {
            InputLayout::Auto => "auto",
            InputLayout::Nchw => "nchw",
            InputLayout::Nhwc => "nhwc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnnxConfig {
    pub model_path: PathBuf,
    /// Hex SHA-256 the model file must match, when set.
    pub expected_sha256: Option<String>,
    pub pooled_output: String,
    pub conv_output: String,
    pub layout: InputLayout,
    /// Interpreter running the worker. `VIDSUM_PYTHON` overrides the default `python3`.
    pub python: PathBuf,
}

impl OnnxConfig {
    pub fn new(model_path: impl Into<PathBuf>) -> Self {
        Self {
            model_path: model_path.into(),
            expected_sha256: None,
            pooled_output: DEFAULT_POOLED_OUTPUT.into(),
            conv_output: DEFAULT_CONV_OUTPUT.into(),
            layout: InputLayout::Auto,
            python: std::env::var_os("VIDSUM_PYTHON")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("python3")),
        }
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path)
        .map_err(|e| Error::ModelLoad(format!("{}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Layout of the first graph input that is not an initializer, from its
/// declared shape: a 3 in position 1 means NCHW, in position 3 NHWC.
pub fn detect_layout(model: &[u8]) -> Result<InputLayout> {
    let bad = |what: &str| Error::ModelLoad(format!("not an ONNX model: {what}"));
    let graph = proto::fields(model)
        .map_err(|_| bad("truncated model"))?
        .into_iter()
        .find_map(|f| (f.number == 7).then_some(f.bytes))
        .ok_or_else(|| bad("no graph"))?;
    let graph_fields = proto::fields(graph).map_err(|_| bad("truncated graph"))?;
    let mut initializers = Vec::new();
    for f in graph_fields.iter().filter(|f| f.number == 5) {
        let name = proto::fields(f.bytes)
            .map_err(|_| bad("truncated initializer"))?
            .into_iter()
            .find(|t| t.number == 8)
            .map(|t| t.bytes);
        initializers.extend(name);
    }
    for input in graph_fields.iter().filter(|f| f.number == 11) {
        let info = proto::fields(input.bytes).map_err(|_| bad("truncated input"))?;
        let name = info.iter().find(|f| f.number == 1).map(|f| f.bytes).unwrap_or_default();
        if initializers.contains(&name) {
            continue;
        }
        let dims = input_dims(&info).ok_or_else(|| bad("input without a tensor shape"))?;
        return match dims.as_slice() {
            [_, Some(3), _, _] => Ok(InputLayout::Nchw),
            [_, _, _, Some(3)] => Ok(InputLayout::Nhwc),
            _ => Err(Error::ModelLoad(format!(
                "cannot tell the channel axis of input {:?} with shape {dims:?}",
                String::from_utf8_lossy(name)
            ))),
        };
    }
    Err(bad("graph has no inputs"))
}

/// `ValueInfoProto.type.tensor_type.shape.dim[*].dim_value`, `None` for symbolic dims.
fn input_dims(info: &[proto::Field<'_>]) -> Option<Vec<Option<u64>>> {
    fn sub<'a>(fields: &[proto::Field<'a>], n: u32) -> Option<Vec<proto::Field<'a>>> {
        let f = fields.iter().find(|f| f.number == n)?;
        proto::fields(f.bytes).ok()
    }
    let ty = sub(info, 2)?;
    let tensor = sub(&ty, 1)?;
    let shape = sub(&tensor, 2)?;
    shape
        .iter()
        .filter(|f| f.number == 1)
        .map(|d| {
            let dim = proto::fields(d.bytes).ok()?;
            Some(dim.iter().find(|f| f.number == 1 && f.wire == 0).map(|f| f.varint))
        })
        .collect()
}

/// Just enough protobuf wire-format decoding to walk an ONNX graph header.
mod proto {
    pub struct Field<'a> {
        pub number: u32,
        pub wire: u8,
        pub varint: u64,
        pub bytes: &'a [u8],
    }

    pub struct Truncated;

    fn varint(buf: &[u8], pos: &mut usize) -> Result<u64, Truncated> {
        let mut out = 0u64;
        for shift in (0..64).step_by(7) {
            let b = *buf.get(*pos).ok_or(Truncated)?;
            *pos += 1;
            out |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(out);
            }
        }
        Err(Truncated)
    }

    pub fn fields(buf: &[u8]) -> Result<Vec<Field<'_>>, Truncated> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < buf.len() {
            let key = varint(buf, &mut pos)?;
            let (number, wire) = ((key >> 3) as u32, (key & 7) as u8);
            let mut field = Field {
                number,
                wire,
                varint: 0,
                bytes: &[],
            };
            let width = match wire {
                0 => {
                    field.varint = varint(buf, &mut pos)?;
                    0
                }
                1 => 8,
                2 => varint(buf, &mut pos)? as usize,
                5 => 4,
                _ => return Err(Truncated),
            };
            let end = pos.checked_add(width).filter(|&e| e <= buf.len()).ok_or(Truncated)?;
            field.bytes = &buf[pos..end];
            pos = end;
            out.push(field);
        }
        Ok(out)
    }
}

struct Worker {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

pub struct OnnxBackend {
    sha256: String,
    latent_dim: usize,
    conv_shape: (usize, usize, usize),
    worker: Mutex<Worker>,
}

impl OnnxBackend {
    /// Verifies the model file, starts the worker and checks the pooled output
    /// is `LATENT_DIM` wide.
    pub fn load(cfg: &OnnxConfig) -> Result<Self> {
        let bytes = fs::read(&cfg.model_path)
            .map_err(|e| Error::ModelLoad(format!("{}: {e}", cfg.model_path.display())))?;
        let sha256 = hex::encode(Sha256::digest(&bytes));
        if let Some(expected) = &cfg.expected_sha256 {
            if !expected.eq_ignore_ascii_case(&sha256) {
                return Err(Error::ModelLoad(format!(
                    "{} has SHA-256 {sha256}, expected {expected}",
                    cfg.model_path.display()
                )));
            }
        }
        let layout = match cfg.layout {
            InputLayout::Auto => detect_layout(&bytes)?,
            explicit => explicit,
        };
        drop(bytes);
        let mut child = Command::new(&cfg.python)
            .arg("-c")
            .arg(WORKER_SOURCE)
            .arg(&cfg.model_path)
            .arg(&cfg.pooled_output)
            .arg(&cfg.conv_output)
            .arg(layout.as_str())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::ModelLoad(format!("cannot start {}: {e}", cfg.python.display())))?;
        let mut worker = Worker {
            stdin: BufWriter::new(child.stdin.take().expect("piped stdin")),
            stdout: BufReader::new(child.stdout.take().expect("piped stdout")),
            child,
        };
        let header = read_reply(&mut worker.stdout, b"VSOK", 4).map_err(|e| {
            let _ = worker.child.kill();
            let _ = worker.child.wait();
            e
        })?;
        let [latent_dim, h, w, c] = [header[0], header[1], header[2], header[3]].map(|v| v as usize);
        let backend = Self {
            sha256,
            latent_dim,
            conv_shape: (h, w, c),
            worker: Mutex::new(worker),
        };
        if latent_dim != LATENT_DIM {
            return Err(Error::ShapeMismatch(format!(
                "output {:?} is {latent_dim} wide, expected {LATENT_DIM}",
                cfg.pooled_output
            )));
        }
        Ok(backend)
    }

    pub fn sha256(&self) -> &str {
        &self.sha256
    }

    /// `(height, width, channels)` of the conv output.
    pub fn conv_shape(&self) -> (usize, usize, usize) {
        self.conv_shape
    }

    fn run(&self, frames: &[Frame], want_conv: bool) -> Result<(Vec<LatentVector>, Vec<ConvMap>)> {
        if frames.is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        let inputs: Vec<Vec<f32>> = frames.par_iter().map(preprocess).collect();
        let mut guard = self.worker.lock().unwrap_or_else(|p| p.into_inner());
        let worker = &mut *guard;

        let mut request = Vec::with_capacity(12);
        request.extend_from_slice(b"VSRQ");
        request.extend_from_slice(&(frames.len() as u32).to_le_bytes());
        request.extend_from_slice(&(want_conv as u32).to_le_bytes());
        let sent = (|| -> std::io::Result<()> {
            worker.stdin.write_all(&request)?;
            for input in &inputs {
                debug_assert_eq!(input.len(), (INPUT_SIZE * INPUT_SIZE * 3) as usize);
                for v in input {
                    worker.stdin.write_all(&v.to_le_bytes())?;
                }
            }
            worker.stdin.flush()
        })();
        sent.map_err(|e| Error::ModelLoad(format!("feature worker: {e}")))?;

        let n = read_reply(&mut worker.stdout, b"VSRS", 1)?[0] as usize;
        if n != frames.len() {
            return Err(Error::ShapeMismatch(format!(
                "feature worker answered {n} frames for a batch of {}",
                frames.len()
            )));
        }
        let pooled = read_f32s(&mut worker.stdout, n * self.latent_dim)?;
        let latents = frames
            .iter()
            .zip(pooled.chunks_exact(self.latent_dim))
            .map(|(f, v)| LatentVector::new(f.index, v.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let mut maps = Vec::new();
        if want_conv {
            let (h, w, c) = self.conv_shape;
            let grid = read_f32s(&mut worker.stdout, n * h * w * c)?;
            for (f, v) in frames.iter().zip(grid.chunks_exact(h * w * c)) {
                maps.push(ConvMap::new(f.index, h, w, c, v.to_vec())?);
            }
        }
        Ok((latents, maps))
    }
}

impl FeatureBackend for OnnxBackend {
    fn extract_latent(&self, frames: &[Frame]) -> Result<Vec<LatentVector>> {
        Ok(self.run(frames, false)?.0)
    }

    fn extract_conv_map(&self, frames: &[Frame]) -> Result<Vec<ConvMap>> {
        Ok(self.run(frames, true)?.1)
    }

    fn extract_both(&self, frames: &[Frame]) -> Result<(Vec<LatentVector>, Vec<ConvMap>)> {
        self.run(frames, true)
    }
}

impl Drop for OnnxBackend {
    fn drop(&mut self) {
        let worker = self.worker.get_mut().unwrap_or_else(|p| p.into_inner());
        let mut stop = Vec::from(*b"VSRQ");
        stop.extend_from_slice(&[0; 8]);
        let clean = worker.stdin.write_all(&stop).and_then(|_| worker.stdin.flush()).is_ok();
        if !clean {
            let _ = worker.child.kill();
        }
        let _ = worker.child.wait();
    }
}

/// Reads a tagged reply with `n_fields` u32 fields. A `VSER` reply carries the
/// worker's error message.
fn read_reply<R: Read>(r: &mut R, tag: &[u8; 4], n_fields: usize) -> Result<Vec<u32>> {
    let lost = |e: std::io::Error| Error::ModelLoad(format!("feature worker exited: {e}"));
    let mut got = [0u8; 4];
    r.read_exact(&mut got).map_err(lost)?;
    if &got == b"VSER" {
        let len = read_u32(r).map_err(lost)? as usize;
        let mut msg = vec![0u8; len];
        r.read_exact(&mut msg).map_err(lost)?;
        return Err(Error::ModelLoad(String::from_utf8_lossy(&msg).into_owned()));
    }
    if &got != tag {
        return Err(Error::ModelLoad(format!(
            "feature worker sent {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(tag)
        )));
    }
    (0..n_fields).map(|_| read_u32(r).map_err(lost)).collect()
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)
        .map_err(|e| Error::ModelLoad(format!("feature worker exited mid-batch: {e}")))?;
    Ok(raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.onnx");
        fs::write(&p, b"abc").unwrap();
        assert_eq!(
            file_sha256(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn digest_mismatch_is_a_model_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.onnx");
        fs::write(&p, b"abc").unwrap();
        let mut cfg = OnnxConfig::new(&p);
        cfg.expected_sha256 = Some("00".repeat(32));
        assert!(matches!(OnnxBackend::load(&cfg), Err(Error::ModelLoad(_))));
    }

    #[test]
    fn missing_file_is_a_model_error() {
        let cfg = OnnxConfig::new("/nonexistent/model.onnx");
        assert!(matches!(OnnxBackend::load(&cfg), Err(Error::ModelLoad(_))));
    }

    #[test]
    fn worker_error_reply_is_surfaced() {
        let mut reply = Vec::from(*b"VSER");
        reply.extend_from_slice(&5u32.to_le_bytes());
        reply.extend_from_slice(b"boom!");
        match read_reply(&mut reply.as_slice(), b"VSOK", 4) {
            Err(Error::ModelLoad(msg)) => assert_eq!(msg, "boom!"),
            other => panic!("{other:?}"),
        }
    }
}
