//! Label generation and evaluation toolkit for multiplexed immunofluorescence
//! slides: slide bundles, per-instance stain gating, the rule cascade that
//! turns positivity into cell classes, patch datasets, a baseline softmax
//! classifier, patient-level cross-validation and the evaluation metrics.

pub mod cascade;
pub mod classes;
pub mod classifier;
pub mod cv;
pub mod metrics;
pub mod patches;
pub mod pipeline;
pub mod raster;
pub mod slide;
pub mod stats;
pub mod synth;

pub use classes::{CellClass, Outcome};
