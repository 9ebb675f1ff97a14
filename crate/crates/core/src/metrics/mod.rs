//! Detection, instance matching, classification and bounded metrics, plus
//! the Friedman test.

mod bounded;
mod classification;
mod detection;
mod friedman;
pub mod gamma;
mod matching;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::{CellClass, Outcome};
use crate::raster::Grid;

pub use bounded::{bounded_metrics, BoundedClassMetrics, BoundedMetrics, ParentMap};
pub use classification::{class_metrics, resolve_pairs, ClassMetrics, PerClassMetrics};
pub use detection::{detection_pr, DetectionResult};
pub use friedman::{friedman_test, mid_ranks, FriedmanResult};
pub use gamma::chi_square_sf;
pub use matching::{match_instances, MatchedPair, MatchedPairSet};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("instance maps differ in size: prediction {pred:?}, truth {truth:?}")]
    DimensionMismatch { pred: (usize, usize), truth: (usize, usize) },
    #[error("no {side} class for paired instance {id}")]
    MissingClass { side: &'static str, id: u32 },
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_dims(pred: &Grid<u32>, truth: &Grid<u32>) -> Result<(), MetricsError> {
    if (pred.width, pred.height) != (truth.width, truth.height) {
        return Err(MetricsError::DimensionMismatch {
            pred: (pred.width, pred.height),
            truth: (truth.width, truth.height),
        });
    }
    Ok(())
}

/// `num / den`, or `None` for a zero denominator.
pub(crate) fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Reads `instance_id` and a `class` (or `outcome`) column; other columns are ignored.
pub fn read_class_csv(r: impl Read) -> Result<BTreeMap<u32, String>, MetricsError> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("instance_id").ok_or_else(|| MetricsError::Parse("class CSV has no instance_id column".into()))?;
    let class_col = col("class")
        .or_else(|| col("outcome"))
        .ok_or_else(|| MetricsError::Parse("class CSV has no class or outcome column".into()))?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id: u32 = rec[id_col]
            .parse()
            .map_err(|_| MetricsError::Parse(format!("bad instance id {:?}", &rec[id_col])))?;
        if out.insert(id, rec[class_col].to_string()).is_some() {
            return Err(MetricsError::Parse(format!("instance {id} listed twice")));
        }
    }
    Ok(out)
}

pub fn load_class_csv(path: &Path) -> Result<BTreeMap<u32, String>, MetricsError> {
    read_class_csv(std::fs::File::open(path)?)
}

/// One slide's predicted and reference instances with their labels.
pub struct SlideEvaluation {
    pub pred_map: Grid<u32>,
    pub truth_map: Grid<u32>,
    pub pred_classes: BTreeMap<u32, String>,
    pub truth_classes: BTreeMap<u32, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub slides: usize,
    pub detection: DetectionResult,
    pub matched_pairs: usize,
    pub unmatched_pred: usize,
    pub unmatched_truth: usize,
    /// Matched pairs left out of class metrics, by truth outcome.
    pub dropped_pairs: BTreeMap<String, usize>,
    pub classification: Option<ClassMetrics>,
    pub bounded: Option<BoundedMetrics>,
}

fn pool_detection(parts: &[DetectionResult]) -> DetectionResult {
    let sum = |f: fn(&DetectionResult) -> usize| parts.iter().map(f).sum::<usize>();
    let pred_count = sum(|d| d.pred_count);
    let truth_count = sum(|d| d.truth_count);
    let tp = sum(|d| d.true_positives);
    let covered = sum(|d| d.covered_truth);
    DetectionResult {
        pred_count,
        truth_count,
        true_positives: tp,
        false_positives: pred_count - tp,
        covered_truth: covered,
        missed_truth: truth_count - covered,
        precision: ratio(tp, pred_count),
        recall: ratio(covered, truth_count),
    }
}

fn parse_class(s: &str) -> Result<CellClass, MetricsError> {
    s.parse().map_err(|_| MetricsError::Parse(format!("unknown predicted class {s:?}")))
}

/// Pools matched pairs across slides. Without a parent map, truth labels are
/// subclass outcomes and pairs whose truth is excluded or unlabeled are
/// dropped (their predicted class may be absent). With one, truth labels are
/// parent names and only bounded metrics are computed.
pub fn evaluate(slides: &[SlideEvaluation], parents: Option<&ParentMap>) -> Result<EvalReport, MetricsError> {
    let mut detections = Vec::new();
    let mut unmatched_pred = 0;
    let mut unmatched_truth = 0;
    let mut dropped: BTreeMap<String, usize> = BTreeMap::new();
    let mut sub_pairs = Vec::new();
    let mut parent_pairs = Vec::new();
    for s in slides {
        detections.push(detection_pr(&s.pred_map, &s.truth_map)?);
        let m = match_instances(&s.pred_map, &s.truth_map)?;
        unmatched_pred += m.unmatched_pred.len();
        unmatched_truth += m.unmatched_truth.len();
        if parents.is_some() {
            for (p, t) in resolve_pairs(&m, &s.pred_classes, &s.truth_classes)? {
                parent_pairs.push((parse_class(&p)?, t));
            }
            continue;
        }
        for pair in &m.pairs {
            let t = s.truth_classes.get(&pair.truth).ok_or(MetricsError::MissingClass {
                side: "truth",
                id: pair.truth,
            })?;
            let outcome: Outcome = t
                .parse()
                .map_err(|_| MetricsError::Parse(format!("unknown truth class {t:?}")))?;
            let Some(c) = outcome.class() else {
                *dropped.entry(outcome.as_str().to_string()).or_default() += 1;
                continue;
            };
            let p = s.pred_classes.get(&pair.pred).ok_or(MetricsError::MissingClass {
                side: "prediction",
                id: pair.pred,
            })?;
            sub_pairs.push((parse_class(p)?, c));
        }
    }
    let matched_pairs = sub_pairs.len() + parent_pairs.len() + dropped.values().sum::<usize>();
    Ok(EvalReport {
        slides: slides.len(),
        detection: pool_detection(&detections),
        matched_pairs,
        unmatched_pred,
        unmatched_truth,
        dropped_pairs: dropped,
        classification: parents.is_none().then(|| class_metrics(&sub_pairs)),
        bounded: parents.map(|pm| bounded_metrics(&parent_pairs, pm)),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| x.to_string())
}

/// Per-class rows of a report; undefined ratios are written as `NaN`.
pub fn write_per_class_csv(report: &EvalReport, w: impl Write) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    if let Some(cm) = &report.classification {
        out.write_record(["class", "tp", "fp", "tn", "fn", "ppv", "npv", "prevalence", "prevalence_normalized_ppv"])?;
        for r in &cm.per_class {
            out.write_record([
                r.class.to_string(),
                r.tp.to_string(),
                r.fp.to_string(),
                r.tn.to_string(),
                r.fn_.to_string(),
                cell(r.ppv),
                cell(r.npv),
                cell(r.prevalence),
                cell(r.prevalence_normalized_ppv),
            ])?;
        }
    }
    if let Some(b) = &report.bounded {
        out.write_record(["class", "parent", "positives", "negatives", "ambiguous_negatives", "ppv_upper", "npv_lower", "npv_upper"])?;
        for r in &b.per_class {
            out.write_record([
                r.class.to_string(),
                r.parent.clone(),
                r.positives.to_string(),
                r.negatives.to_string(),
                r.ambiguous_negatives.to_string(),
                cell(r.ppv_upper),
                cell(r.npv_lower),
                cell(r.npv_upper),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
