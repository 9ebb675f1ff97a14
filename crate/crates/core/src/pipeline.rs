//! Glue between the stages: gating a bundle and cutting patches for its
//! labelled instances.

use thiserror::Error;

use crate::cascade::{run_cascade, CascadeError, LabelAssignment, RuleProgram};
use crate::patches::{PatchDataset, PatchError, PatchExtractor};
use crate::slide::SlideBundle;
use crate::stats::{apply_thresholds, compute_stats, InstanceStatsTable, PositivityMatrix, StatsError, ThresholdSet};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error("no threshold for stain {0:?}")]
    MissingThreshold(String),
}

#[derive(Clone, Debug)]
pub struct Labelled {
    pub stats: InstanceStatsTable,
    pub positivity: PositivityMatrix,
    pub labels: LabelAssignment,
}

/// Gates precomputed stats and runs the cascade. Every stain the program
/// reads needs a threshold.
pub fn label_stats(
    stats: InstanceStatsTable,
    thresholds: &ThresholdSet,
    program: &RuleProgram,
) -> Result<Labelled, PipelineError> {
    if let Some(s) = program.stains().into_iter().find(|s| thresholds.get(s).is_none()) {
        return Err(PipelineError::MissingThreshold(s));
    }
    let positivity = apply_thresholds(&stats, thresholds)?;
    let labels = run_cascade(program, &positivity)?;
    Ok(Labelled {
        stats,
        positivity,
        labels,
    })
}

/// Stats over the thresholded stains, gating and cascade for one bundle.
pub fn label_bundle(
    bundle: &SlideBundle,
    thresholds: &ThresholdSet,
    program: &RuleProgram,
) -> Result<Labelled, PipelineError> {
    let stains: Vec<&str> = thresholds.values.keys().map(String::as_str).collect();
    let stats = compute_stats(bundle, &stains)?;
    label_stats(stats, thresholds, program)
}

/// Patches for every instance labelled with a class; excluded and unlabeled
/// instances are skipped.
pub fn extract_labelled_patches(
    bundle: &SlideBundle,
    stats: &InstanceStatsTable,
    labels: &LabelAssignment,
    channels: &[&str],
) -> Result<PatchDataset, PipelineError> {
    let extractor = PatchExtractor::new(bundle, channels)?;
    let mut ds = PatchDataset::new(channels.iter().map(|s| s.to_string()).collect());
    for (id, res) in labels.iter() {
        let Some(class) = res.outcome.class() else { continue };
        let row = stats
            .get(id)
            .ok_or_else(|| StatsError::Table(format!("instance {id} has no stats row")))?;
        ds.push(extractor.extract(id, class, row.centroid_x, row.centroid_y)?)?;
    }
    Ok(ds)
}
