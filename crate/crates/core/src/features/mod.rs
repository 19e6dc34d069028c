//! Per-frame descriptors: pooled latent vectors, their univariate Gaussian
//! summaries and selective convolutional descriptors.

mod mock;
mod onnx;
pub mod scda;

pub use mock::MockBackend;
pub use onnx::{detect_layout, file_sha256, InputLayout, OnnxBackend, OnnxConfig, DEFAULT_CONV_OUTPUT, DEFAULT_POOLED_OUTPUT};
pub use scda::{
    channel_sum, largest_connected_component, scda_descriptor, threshold_mask, Grid, Mask,
    ScdaDescriptor,
};

use crate::error::{Error, Result};
use crate::ingest::Frame;

/// Width of the pooled output of the reference network.
pub const LATENT_DIM: usize = 2048;

/// Side length of the square network input.
pub const INPUT_SIZE: u32 = 299;

/// Pooled activation of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector {
    pub frame_index: usize,
    pub values: Vec<f32>,
}

impl LatentVector {
    pub fn new(frame_index: usize, values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::ShapeMismatch("latent vector is empty".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!(
                "latent vector of frame {frame_index} has a non-finite entry at {pos}"
            )));
        }
        Ok(Self {
            frame_index,
            values,
        })
    }
}

/// Mean and population standard deviation of a latent vector's entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSummary {
    pub frame_index: usize,
    pub mu: f64,
    pub sigma: f64,
}

pub fn gaussian_summary(v: &LatentVector) -> GaussianSummary {
    let n = v.values.len() as f64;
    let mu = v.values.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v
        .values
        .iter()
        .map(|&x| {
            let d = x as f64 - mu;
            d * d
        })
        .sum::<f64>()
        / n;
    GaussianSummary {
        frame_index: v.frame_index,
        mu,
        sigma: var.sqrt(),
    }
}

/// Final convolutional activation grid, stored height-major then width then channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvMap {
    pub frame_index: usize,
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl ConvMap {
    pub fn new(
        frame_index: usize,
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::ShapeMismatch(format!(
                "conv map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "conv map {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!(
                "conv map of frame {frame_index} has non-finite entries"
            )));
        }
        Ok(Self {
            frame_index,
            height,
            width,
            channels,
            values,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Channel vector at grid position `(h, w)`.
    pub fn cell(&self, h: usize, w: usize) -> &[f32] {
        let start = (h * self.width + w) * self.channels;
        &self.values[start..start + self.channels]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Spatial average of every channel, i.e. global average pooling.
    pub fn global_average(&self) -> Vec<f32> {
        let mut acc = vec![0f64; self.channels];
        for cell in self.values.chunks_exact(self.channels) {
            for (a, &v) in acc.iter_mut().zip(cell) {
                *a += v as f64;
            }
        }
        let n = (self.height * self.width) as f64;
        acc.into_iter().map(|a| (a / n) as f32).collect()
    }
}

/// Resizes to 299x299 (bilinear) and maps channel values to `x / 127.5 - 1`.
/// Output is height-major RGB, `299 * 299 * 3` values.
pub fn preprocess(frame: &Frame) -> Vec<f32> {
    let scale = |p: &u8| *p as f32 / 127.5 - 1.0;
    if frame.width() == INPUT_SIZE && frame.height() == INPUT_SIZE {
        return frame.pixels().iter().map(scale).collect();
    }
    let resized = image::imageops::resize(
        &frame.to_image(),
        INPUT_SIZE,
        INPUT_SIZE,
        image::imageops::FilterType::Triangle,
    );
    resized.as_raw().iter().map(scale).collect()
}

/// A frozen feature extractor.
pub trait FeatureBackend: Send + Sync {
    /// One pooled latent vector per frame, in input order.
    fn extract_latent(&self, frames: &[Frame]) -> Result<Vec<LatentVector>>;

    /// One final convolutional grid per frame, in input order.
    fn extract_conv_map(&self, frames: &[Frame]) -> Result<Vec<ConvMap>>;

    /// Both outputs; backends that produce them in one pass should override this.
    fn extract_both(&self, frames: &[Frame]) -> Result<(Vec<LatentVector>, Vec<ConvMap>)> {
        Ok((self.extract_latent(frames)?, self.extract_conv_map(frames)?))
    }
}
