//! Patch preparation: resampling to 0.5 µm/px, 41×41 extraction around
//! nucleus centroids, min-max normalization, class-balanced sampling and
//! the on-disk dataset format.

mod dataset;
mod extract;
mod resample;
mod sampler;

use thiserror::Error;

use crate::slide::SlideError;

pub use dataset::{DatasetInfo, PatchDataset, PatchRecord, DATASET_JSON, MANIFEST_CSV, PATCH_FILE};
pub use extract::{normalize_patch, Patch, PatchExtractor};
pub use resample::{resample_bicubic, resampled_extent, CUBIC_A};
pub use sampler::{balanced_sample, BalancedSampler};

/// Patch side length in pixels.
pub const PATCH_SIZE: usize = 41;
/// Patch resolution in µm per pixel.
pub const PATCH_MPP: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PatchError {
    #[error(transparent)]
    Slide(#[from] SlideError),
    #[error("no channels selected for patch extraction")]
    NoChannels,
    #[error("invalid resolution {src_mpp} -> {dst_mpp} µm/px")]
    InvalidResolution { src_mpp: f64, dst_mpp: f64 },
    #[error("resampled raster would be {width}x{height}")]
    DegenerateOutput { width: usize, height: usize },
    #[error("centroid ({x}, {y}) lies outside the slide")]
    CentroidOutside { x: f64, y: f64 },
    #[error("no patches to sample from")]
    EmptyDataset,
    #[error("patch has {found} values, dataset expects {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("channel mismatch: dataset has {expected:?}, got {found:?}")]
    ChannelMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
