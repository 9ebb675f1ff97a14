//! Patient-level 5-fold cross-validation with site and disease coverage.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::slide::{Disease, Site};

pub const FOLDS: usize = 5;
pub const MAX_RETRIES: usize = 10_000;

#[derive(Debug, Error)]
pub enum CvError {
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("slide {0} listed twice")]
    DuplicateSlide(String),
    #[error("{patients} patients cannot be split into {FOLDS} equal groups")]
    NotDivisible { patients: usize },
    #[error("infeasible: every subset needs {constraint}, but the cohort has {available} such patients for {required} subsets")]
    Infeasible {
        constraint: String,
        available: usize,
        required: usize,
    },
    #[error("no split satisfied site and disease coverage within {0} attempts")]
    RetriesExhausted(usize),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortRow {
    pub slide_id: String,
    pub patient_id: String,
    pub site: Site,
    pub disease: Disease,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cohort {
    pub rows: Vec<CohortRow>,
}

impl Cohort {
    pub fn new(rows: Vec<CohortRow>) -> Result<Self, CvError> {
        if rows.is_empty() {
            return Err(CvError::EmptyCohort);
        }
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !seen.insert(r.slide_id.as_str()) {
                return Err(CvError::DuplicateSlide(r.slide_id.clone()));
            }
        }
        Ok(Self { rows })
    }

    /// Reads `slide_id,patient_id,site,disease`.
    pub fn from_csv(r: impl Read) -> Result<Self, CvError> {
        let rows = csv::Reader::from_reader(r)
            .deserialize()
            .collect::<Result<Vec<CohortRow>, _>>()?;
        Self::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self, CvError> {
        Self::from_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> Result<(), CvError> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Patients in sorted order.
    pub fn patients(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| r.patient_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn slides_of<'a>(&'a self, patient: &'a str) -> impl Iterator<Item = &'a CohortRow> + 'a {
        self.rows.iter().filter(move |r| r.patient_id == patient)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// Site and disease coverage of one patient's slides.
#[derive(Clone, Copy, Default)]
struct Coverage {
    bits: u8,
}

impl Coverage {
    const ALL: u8 = 0b1111;

    fn of(rows: &[&CohortRow]) -> Self {
        let mut bits = 0;
        for r in rows {
            bits |= match r.site {
                Site::AscendingColon => 1,
                Site::TerminalIleum => 2,
                Site::Other => 0,
            };
            bits |= match r.disease {
                Disease::Normal => 4,
                Disease::Diseased => 8,
            };
        }
        Self { bits }
    }
}

fn describe(bit: u8) -> &'static str {
    match bit {
        1 => "an ascending_colon slide",
        2 => "a terminal_ileum slide",
        4 => "a normal slide",
        _ => "a diseased slide",
    }
}

/// Checks that a subset of patients covers both sites and both statuses.
pub fn covers_all(cohort: &Cohort, patients: &[String]) -> bool {
    let rows: Vec<&CohortRow> = patients.iter().flat_map(|p| cohort.slides_of(p)).collect();
    Coverage::of(&rows).bits == Coverage::ALL
}

/// Seeded shuffle into five equal patient groups, retried until every
/// train/val/test subset of every fold has coverage. Fold `i` tests on group
/// `i`, validates on group `i + 1` and trains on the rest.
pub fn make_folds(cohort: &Cohort, seed: u64) -> Result<FoldPlan, CvError> {
    let patients = cohort.patients();
    if patients.len() < FOLDS || patients.len() % FOLDS != 0 {
        return Err(CvError::NotDivisible {
            patients: patients.len(),
        });
    }
    let coverage: BTreeMap<&str, u8> = patients
        .iter()
        .map(|p| {
            let rows: Vec<&CohortRow> = cohort.slides_of(p).collect();
            (p.as_str(), Coverage::of(&rows).bits)
        })
        .collect();

    // every group serves as a test set once, so each needs its own patient per constraint
    for bit in [1u8, 2, 4, 8] {
        let available = coverage.values().filter(|&&c| c & bit != 0).count();
        if available < FOLDS {
            return Err(CvError::Infeasible {
                constraint: describe(bit).to_string(),
                available,
                required: FOLDS,
            });
        }
    }

    let group_size = patients.len() / FOLDS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = patients.clone();
    for _ in 0..MAX_RETRIES {
        order.shuffle(&mut rng);
        let groups: Vec<&[String]> = order.chunks(group_size).collect();
        let group_bits: Vec<u8> = groups
            .iter()
            .map(|g| g.iter().fold(0, |acc, p| acc | coverage[p.as_str()]))
            .collect();
        if group_bits.iter().all(|&b| b == Coverage::ALL) {
            // train subsets are unions of three covered groups, so they are covered too
            let folds = (0..FOLDS)
                .map(|i| {
                    let v = (i + 1) % FOLDS;
                    let mut fold = Fold {
                        test: groups[i].to_vec(),
                        val: groups[v].to_vec(),
                        train: (0..FOLDS)
                            .filter(|&j| j != i && j != v)
                            .flat_map(|j| groups[j].iter().cloned())
                            .collect(),
                    };
                    fold.train.sort();
                    fold.val.sort();
                    fold.test.sort();
                    fold
                })
                .collect();
            return Ok(FoldPlan { folds });
        }
    }
    Err(CvError::RetriesExhausted(MAX_RETRIES))
}
