//! Unsupervised video summarization into key-frame storyboards.
//!
//! Frames come from [`ingest`], descriptors from [`features`], pairwise
//! dissimilarities from [`metrics`] and k-medoids from [`clustering`].
//! [`summarize`] ties these into the four methods, [`render`] draws the
//! collage with its timeline, and [`eval`] scores a storyboard against the
//! full video with the Fréchet distance between fitted Gaussians.

pub mod bench;
pub mod clustering;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod metrics;
pub mod render;
pub mod report;
pub mod summarize;

pub use error::{Error, ErrorClass, Result};
pub use summarize::{Method, Storyboard, SummarizerConfig};
