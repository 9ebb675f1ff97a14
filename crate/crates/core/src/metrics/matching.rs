use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::raster::Grid;

use super::{check_dims, MetricsError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: u32,
    pub truth: u32,
    pub iou: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchedPairSet {
    /// Sorted by prediction id.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_pred: Vec<u32>,
    pub unmatched_truth: Vec<u32>,
}

/// Pairs every prediction with the truth instance it overlaps at IoU > 0.5.
/// Such a partner is unique on both sides, so collecting the qualifying
/// overlaps is the whole matching.
pub fn match_instances(pred: &Grid<u32>, truth: &Grid<u32>) -> Result<MatchedPairSet, MetricsError> {
    check_dims(pred, truth)?;
    let mut pred_area: HashMap<u32, u64> = HashMap::new();
    let mut truth_area: HashMap<u32, u64> = HashMap::new();
    let mut overlap: HashMap<(u32, u32), u64> = HashMap::new();
    for (&p, &t) in pred.data.iter().zip(&truth.data) {
        if p != 0 {
            *pred_area.entry(p).or_default() += 1;
        }
        if t != 0 {
            *truth_area.entry(t).or_default() += 1;
        }
        if p != 0 && t != 0 {
            *overlap.entry((p, t)).or_default() += 1;
        }
    }
    let mut candidates: Vec<(u32, u32, u64)> = overlap
        .into_iter()
        // IoU = i / (a + b - i) > 1/2  <=>  3i > a + b
        .filter(|&((p, t), i)| 3 * i > pred_area[&p] + truth_area[&t])
        .map(|((p, t), i)| (p, t, i))
        .collect();
    candidates.sort_unstable();

    let mut used_pred = BTreeSet::new();
    let mut used_truth = BTreeSet::new();
    let mut pairs = Vec::with_capacity(candidates.len());
    for (p, t, i) in candidates {
        if used_pred.contains(&p) || used_truth.contains(&t) {
            continue;
        }
        used_pred.insert(p);
        used_truth.insert(t);
        let union = pred_area[&p] + truth_area[&t] - i;
        pairs.push(MatchedPair {
            pred: p,
            truth: t,
            iou: i as f64 / union as f64,
        });
    }
    let mut unmatched_pred: Vec<u32> = pred_area.keys().filter(|p| !used_pred.contains(*p)).copied().collect();
    let mut unmatched_truth: Vec<u32> = truth_area.keys().filter(|t| !used_truth.contains(*t)).copied().collect();
    unmatched_pred.sort_unstable();
    unmatched_truth.sort_unstable();
    Ok(MatchedPairSet {
        pairs,
        unmatched_pred,
        unmatched_truth,
    })
}
