use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classes::CellClass;

use super::{ratio, MetricsError};

/// Subclass to parent class, for truth that only carries parent labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParentMap(pub BTreeMap<CellClass, String>);

impl Default for ParentMap {
    fn default() -> Self {
        Self(BTreeMap::from([
            (CellClass::HelperT, "lymphocyte".to_string()),
            (CellClass::Enterocyte, "epithelial".to_string()),
            (CellClass::Progenitor, "epithelial".to_string()),
            (CellClass::Fibroblast, "connective".to_string()),
            (CellClass::StromalUndetermined, "connective".to_string()),
        ]))
    }
}

impl ParentMap {
    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| MetricsError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn parent(&self, c: CellClass) -> Option<&str> {
        self.0.get(&c).map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedClassMetrics {
    pub class: CellClass,
    pub parent: String,
    pub positives: usize,
    pub negatives: usize,
    pub ambiguous_negatives: usize,
    pub ppv_upper: Option<f64>,
    pub npv_lower: Option<f64>,
    pub npv_upper: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedMetrics {
    pub per_class: Vec<BoundedClassMetrics>,
    pub undefined: Vec<String>,
}

/// PPV upper bound and NPV interval for each subclass in `pm`, from
/// `(predicted subclass, truth parent)` pairs. Predicted classes outside the
/// map count as negatives for every mapped subclass.
pub fn bounded_metrics(labels: &[(CellClass, String)], pm: &ParentMap) -> BoundedMetrics {
    let mut undefined = Vec::new();
    let per_class = pm
        .0
        .iter()
        .map(|(&c, parent)| {
            let mut positives = 0;
            let mut parent_hits = 0;
            let mut negatives = 0;
            let mut ambiguous = 0;
            for (pred, truth_parent) in labels {
                let same_parent = truth_parent == parent;
                if *pred == c {
                    positives += 1;
                    parent_hits += same_parent as usize;
                } else {
                    negatives += 1;
                    ambiguous += same_parent as usize;
                }
            }
            let ppv_upper = ratio(parent_hits, positives);
            let npv_lower = ratio(negatives - ambiguous, negatives);
            let npv_upper = ratio(negatives, negatives);
            if ppv_upper.is_none() {
                undefined.push(format!("ppv_upper:{c}"));
            }
            if negatives == 0 {
                undefined.push(format!("npv_lower:{c}"));
                undefined.push(format!("npv_upper:{c}"));
            }
            BoundedClassMetrics {
                class: c,
                parent: parent.clone(),
                positives,
                negatives,
                ambiguous_negatives: ambiguous,
                ppv_upper,
                npv_lower,
                npv_upper,
            }
        })
        .collect();
    BoundedMetrics { per_class, undefined }
}

#[cfg(test)]
mod tests {
    use super::*;
    use CellClass::{BCell as B, Goblet as A1};

    #[test]
    fn hand_example() {
        let pm = ParentMap(BTreeMap::from([(A1, "P".to_string()), (B, "Q".to_string())]));
        let labels = vec![(A1, "P".to_string()), (A1, "Q".to_string()), (B, "P".to_string())];
        let m = bounded_metrics(&labels, &pm);
        let a = m.per_class.iter().find(|r| r.class == A1).unwrap();
        assert_eq!(a.ppv_upper, Some(0.5));
        assert_eq!((a.negatives, a.ambiguous_negatives), (1, 1));
        assert_eq!((a.npv_lower, a.npv_upper), (Some(0.0), Some(1.0)));
    }

    #[test]
    fn never_right_at_parent_level() {
        let pm = ParentMap::default();
        let labels = vec![(CellClass::HelperT, "epithelial".to_string()); 4];
        let m = bounded_metrics(&labels, &pm);
        let h = m.per_class.iter().find(|r| r.class == CellClass::HelperT).unwrap();
        assert_eq!(h.ppv_upper, Some(0.0));
        assert_eq!(h.npv_lower, None);
        assert!(m.undefined.contains(&"ppv_upper:enterocyte".to_string()));
    }

    #[test]
    fn default_map_json_shape() {
        let json = serde_json::to_string(&ParentMap::default()).unwrap();
        assert!(json.contains("\"helper_t\":\"lymphocyte\""));
        let back: ParentMap = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ParentMap::default());
    }
}
