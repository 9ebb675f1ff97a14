use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classes::CellClass;

use super::{ratio, MatchedPairSet, MetricsError};

/// Looks up both classes of every matched pair, as `(pred, truth)`.
pub fn resolve_pairs<P: Clone, T: Clone>(
    pairs: &MatchedPairSet,
    pred_classes: &BTreeMap<u32, P>,
    truth_classes: &BTreeMap<u32, T>,
) -> Result<Vec<(P, T)>, MetricsError> {
    pairs
        .pairs
        .iter()
        .map(|p| {
            let pc = pred_classes.get(&p.pred).ok_or(MetricsError::MissingClass {
                side: "prediction",
                id: p.pred,
            })?;
            let tc = truth_classes.get(&p.truth).ok_or(MetricsError::MissingClass {
                side: "truth",
                id: p.truth,
            })?;
            Ok((pc.clone(), tc.clone()))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerClassMetrics {
    pub class: CellClass,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub prevalence: Option<f64>,
    pub prevalence_normalized_ppv: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub pair_count: usize,
    pub accuracy: Option<f64>,
    pub per_class: Vec<PerClassMetrics>,
    /// Rows are truth classes, columns predictions, both in [`CellClass::ALL`] order.
    pub confusion: Vec<Vec<usize>>,
    /// `metric:class` for every ratio with a zero denominator.
    pub undefined: Vec<String>,
}

impl ClassMetrics {
    pub fn get(&self, class: CellClass) -> &PerClassMetrics {
        &self.per_class[class.index()]
    }
}

/// One-vs-rest metrics over `(pred, truth)` class pairs.
pub fn class_metrics(labels: &[(CellClass, CellClass)]) -> ClassMetrics {
    let k = CellClass::ALL.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for &(p, t) in labels {
        confusion[t.index()][p.index()] += 1;
    }
    let n = labels.len();
    let mut undefined = Vec::new();
    let mut flag = |name: &str, class: CellClass, v: Option<f64>| {
        if v.is_none() {
            undefined.push(format!("{name}:{class}"));
        }
        v
    };
    let per_class = CellClass::ALL
        .iter()
        .map(|&c| {
            let i = c.index();
            let tp = confusion[i][i];
            let truth_c: usize = confusion[i].iter().sum();
            let pred_c: usize = confusion.iter().map(|row| row[i]).sum();
            let fp = pred_c - tp;
            let fn_ = truth_c - tp;
            let tn = n - tp - fp - fn_;
            let ppv = flag("ppv", c, ratio(tp, tp + fp));
            let npv = flag("npv", c, ratio(tn, tn + fn_));
            let prevalence = flag("prevalence", c, ratio(truth_c, n));
            let normalized = match (ppv, prevalence) {
                (Some(p), Some(q)) if q > 0.0 => Some(p / q),
                _ => None,
            };
            let prevalence_normalized_ppv = flag("prevalence_normalized_ppv", c, normalized);
            PerClassMetrics {
                class: c,
                tp,
                fp,
                tn,
                fn_,
                ppv,
                npv,
                prevalence,
                prevalence_normalized_ppv,
            }
        })
        .collect();
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let accuracy = ratio(correct, n);
    if accuracy.is_none() {
        undefined.push("accuracy".into());
    }
    ClassMetrics {
        pair_count: n,
        accuracy,
        per_class,
        confusion,
        undefined,
    }
}
