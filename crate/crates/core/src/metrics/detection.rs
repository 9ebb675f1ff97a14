use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::raster::Grid;

use super::{check_dims, ratio, MetricsError};

/// Any-overlap detection counts. Predictions and truths are scored
/// independently, so one prediction may cover several truths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub pred_count: usize,
    pub truth_count: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub covered_truth: usize,
    pub missed_truth: usize,
    /// `None` when there are no predictions.
    pub precision: Option<f64>,
    /// `None` when there are no truth instances.
    pub recall: Option<f64>,
}

pub fn detection_pr(pred: &Grid<u32>, truth: &Grid<u32>) -> Result<DetectionResult, MetricsError> {
    check_dims(pred, truth)?;
    let mut preds = BTreeSet::new();
    let mut truths = BTreeSet::new();
    let mut hit_preds = BTreeSet::new();
    let mut covered = BTreeSet::new();
    for (&p, &t) in pred.data.iter().zip(&truth.data) {
        if p != 0 {
            preds.insert(p);
        }
        if t != 0 {
            truths.insert(t);
        }
        if p != 0 && t != 0 {
            hit_preds.insert(p);
            covered.insert(t);
        }
    }
    Ok(DetectionResult {
        pred_count: preds.len(),
        truth_count: truths.len(),
        true_positives: hit_preds.len(),
        false_positives: preds.len() - hit_preds.len(),
        covered_truth: covered.len(),
        missed_truth: truths.len() - covered.len(),
        precision: ratio(hit_preds.len(), preds.len()),
        recall: ratio(covered.len(), truths.len()),
    })
}
