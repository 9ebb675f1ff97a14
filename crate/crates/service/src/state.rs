//! Per-slide session state. Each slide holds an immutable snapshot of its
//! thresholds and derived labels behind a lock; writers build a new snapshot
//! under a per-slide mutex and swap it in whole.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use cytogate_core::cascade::{LabelAssignment, RuleProgram};
use cytogate_core::pipeline::label_stats;
use cytogate_core::raster::Grid;
use cytogate_core::slide::SlideBundle;
use cytogate_core::stats::{check_threshold, compute_stats, InstanceStatsTable, PositivityMatrix, ThresholdSet};
use cytogate_core::{CellClass, Outcome};
use serde::Serialize;

use crate::error::ServiceError;

pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const TILE_SIZE: usize = 256;

pub struct Snapshot {
    /// Values set explicitly; these are what gets persisted.
    pub thresholds: ThresholdSet,
    pub positivity: PositivityMatrix,
    pub labels: LabelAssignment,
}

pub struct SlideEntry {
    pub bundle: SlideBundle,
    pub stats: InstanceStatsTable,
    row_of: HashMap<u32, usize>,
    program: Arc<RuleProgram>,
    instances: Mutex<Option<Arc<Grid<u32>>>>,
    channels: Mutex<HashMap<String, Arc<Grid<u16>>>>,
    snapshot: RwLock<Arc<Snapshot>>,
    writer: Mutex<()>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SlideSummary {
    pub id: String,
    pub patient: String,
    pub site: String,
    pub disease: String,
    pub instance_count: usize,
    pub width: u32,
    pub height: u32,
    pub microns_per_pixel: f64,
    pub bit_depth: u8,
    pub channels: Vec<String>,
    pub levels: u32,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassSummary {
    pub slide_id: String,
    pub instance_count: usize,
    pub thresholds: BTreeMap<String, f64>,
    /// Program stains without an explicit threshold; nothing is positive for them.
    pub unset: Vec<String>,
    pub positive_counts: BTreeMap<String, usize>,
    pub class_counts: BTreeMap<CellClass, usize>,
    pub excluded: usize,
    pub unlabeled: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct HistogramResponse {
    pub stain: String,
    pub bins: usize,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub threshold: Option<f64>,
    pub positive_count: usize,
    pub instance_count: usize,
}

fn internal(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Internal(e.to_string())
}

impl SlideEntry {
    pub fn open(dir: &Path, program: Arc<RuleProgram>) -> Result<Self, String> {
        let bundle = SlideBundle::open(dir).map_err(|e| e.to_string())?;
        if !bundle.has_instance_map() {
            return Err("bundle has no instance map".into());
        }
        let missing: Vec<String> = program.stains().into_iter().filter(|s| !bundle.has_channel(s)).collect();
        if !missing.is_empty() {
            return Err(format!("bundle lacks stains used by the rules: {}", missing.join(", ")));
        }
        let channels: Vec<&str> = bundle.channels().iter().map(String::as_str).collect();
        let stats = compute_stats(&bundle, &channels).map_err(|e| e.to_string())?;
        let th_path = dir.join(THRESHOLDS_FILE);
        let thresholds = if th_path.exists() {
            ThresholdSet::load(&th_path).map_err(|e| format!("{}: {e}", th_path.display()))?
        } else {
            ThresholdSet::new()
        };
        if let Some(s) = thresholds.values.keys().find(|s| !bundle.has_channel(s)) {
            return Err(format!("{THRESHOLDS_FILE} names unknown stain {s:?}"));
        }
        let row_of = stats.rows.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        let mut entry = Self {
            bundle,
            stats,
            row_of,
            program,
            instances: Mutex::new(None),
            channels: Mutex::new(HashMap::new()),
            snapshot: RwLock::new(Arc::new(Snapshot {
                thresholds: ThresholdSet::new(),
                positivity: PositivityMatrix::from_rows(vec![], vec![]).expect("empty matrix"),
                labels: LabelAssignment {
                    ids: vec![],
                    resolutions: vec![],
                },
            })),
            writer: Mutex::new(()),
        };
        let snap = entry.build_snapshot(thresholds).map_err(|e| e.to_string())?;
        entry.snapshot = RwLock::new(Arc::new(snap));
        Ok(entry)
    }

    pub fn id(&self) -> &str {
        &self.bundle.manifest().slide_id
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Levels `0..levels`; the last one fits the slide in a single tile.
    pub fn levels(&self) -> u32 {
        let mut z = 0;
        let longest = self.bundle.width().max(self.bundle.height()) as usize;
        while (longest >> z) > TILE_SIZE {
            z += 1;
        }
        z + 1
    }

    pub fn summary(&self) -> SlideSummary {
        let m = self.bundle.manifest();
        SlideSummary {
            id: m.slide_id.clone(),
            patient: m.patient_id.clone(),
            site: m.site.as_str().into(),
            disease: m.disease.as_str().into(),
            instance_count: self.stats.len(),
            width: m.width_px,
            height: m.height_px,
            microns_per_pixel: m.microns_per_pixel,
            bit_depth: m.bit_depth,
            channels: m.channels.clone(),
            levels: self.levels(),
        }
    }

    /// Thresholds in force: the explicit ones, plus one above the bit-depth
    /// maximum for program stains left unset.
    fn effective(&self, explicit: &ThresholdSet) -> ThresholdSet {
        let mut eff = explicit.clone();
        let never = self.bundle.manifest().max_value() as f64 + 1.0;
        for s in self.program.stains() {
            eff.values.entry(s).or_insert(never);
        }
        eff
    }

    fn build_snapshot(&self, thresholds: ThresholdSet) -> Result<Snapshot, ServiceError> {
        let labelled = label_stats(self.stats.clone(), &self.effective(&thresholds), &self.program).map_err(internal)?;
        Ok(Snapshot {
            thresholds,
            positivity: labelled.positivity,
            labels: labelled.labels,
        })
    }

    /// Merges, persists and recomputes; concurrent readers keep seeing the
    /// previous snapshot until the swap.
    pub fn update_thresholds(&self, changes: &BTreeMap<String, f64>) -> Result<Arc<Snapshot>, ServiceError> {
        for (stain, &v) in changes {
            if !self.bundle.has_channel(stain) {
                return Err(ServiceError::UnknownStain(stain.clone()));
            }
            check_threshold(stain, v).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        }
        let _guard = self.writer.lock().expect("writer lock");
        let mut next = self.snapshot().thresholds.clone();
        for (stain, &v) in changes {
            next.insert(stain.clone(), v).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        }
        let snap = Arc::new(self.build_snapshot(next)?);
        snap.thresholds
            .save(&self.bundle.root().join(THRESHOLDS_FILE))
            .map_err(|e| internal(format!("could not persist thresholds: {e}")))?;
        *self.snapshot.write().expect("snapshot lock") = snap.clone();
        Ok(snap)
    }

    pub fn class_summary(&self, snap: &Snapshot) -> ClassSummary {
        let counts = snap.labels.counts();
        let program_stains = self.program.stains();
        let positive_counts = snap
            .positivity
            .stains
            .iter()
            .map(|s| (s.clone(), snap.positivity.positive_count(s).unwrap_or(0)))
            .collect();
        ClassSummary {
            slide_id: self.id().to_string(),
            instance_count: snap.labels.len(),
            thresholds: snap.thresholds.values.clone(),
            unset: program_stains
                .into_iter()
                .filter(|s| snap.thresholds.get(s).is_none())
                .collect(),
            positive_counts,
            class_counts: CellClass::ALL
                .iter()
                .map(|&c| (c, counts[&Outcome::Class(c)]))
                .collect(),
            excluded: counts[&Outcome::Excluded],
            unlabeled: counts[&Outcome::Unlabeled],
        }
    }

    pub fn histogram(&self, stain: &str, bins: usize) -> Result<HistogramResponse, ServiceError> {
        if !(1..=1024).contains(&bins) {
            return Err(ServiceError::BadRequest(format!("bins must be in 1..=1024, got {bins}")));
        }
        let values = self
            .stats
            .column(stain)
            .ok_or_else(|| ServiceError::UnknownStain(stain.to_string()))?;
        let snap = self.snapshot();
        let threshold = snap.thresholds.get(stain);
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let (lo, hi) = if values.is_empty() {
            (0.0, 1.0)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo, lo + 1.0)
        };
        let width = hi - lo;
        let mut edges: Vec<f64> = (0..bins).map(|i| lo + width * i as f64 / bins as f64).collect();
        edges.push(hi);
        let mut counts = vec![0usize; bins];
        for &v in &values {
            let b = (((v - lo) / width) * bins as f64).floor() as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let positive_count = threshold.map_or(0, |t| values.iter().filter(|&&v| v >= t).count());
        Ok(HistogramResponse {
            stain: stain.to_string(),
            bins,
            edges,
            counts,
            threshold,
            positive_count,
            instance_count: values.len(),
        })
    }

    pub fn row_of(&self, id: u32) -> Option<usize> {
        self.row_of.get(&id).copied()
    }

    pub fn instance_grid(&self) -> Result<Arc<Grid<u32>>, ServiceError> {
        let mut slot = self.instances.lock().expect("instance cache lock");
        if let Some(g) = slot.as_ref() {
            return Ok(g.clone());
        }
        let g = Arc::new(self.bundle.read_instance_map().map_err(internal)?.grid);
        *slot = Some(g.clone());
        Ok(g)
    }

    pub fn channel_grid(&self, name: &str) -> Result<Arc<Grid<u16>>, ServiceError> {
        if !self.bundle.has_channel(name) {
            return Err(ServiceError::UnknownStain(name.to_string()));
        }
        let mut cache = self.channels.lock().expect("channel cache lock");
        if let Some(g) = cache.get(name) {
            return Ok(g.clone());
        }
        let g = Arc::new(self.bundle.read_channel(name).map_err(internal)?.grid);
        cache.insert(name.to_string(), g.clone());
        Ok(g)
    }
}

pub struct AppState {
    pub slides: BTreeMap<String, Arc<SlideEntry>>,
    /// Problems met while scanning the data root.
    pub warnings: Vec<String>,
    pub static_dir: Option<PathBuf>,
}

impl AppState {
    /// Opens every sub-directory of `root` holding a `manifest.json`.
    pub fn open(root: &Path, program: RuleProgram, static_dir: Option<PathBuf>) -> std::io::Result<Self> {
        let program = Arc::new(program);
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("manifest.json").is_file())
            .collect();
        dirs.sort();
        let mut slides = BTreeMap::new();
        let mut warnings = Vec::new();
        for dir in dirs {
            match SlideEntry::open(&dir, program.clone()) {
                Ok(entry) => {
                    let id = entry.id().to_string();
                    if slides.contains_key(&id) {
                        warnings.push(format!("{}: duplicate slide id {id:?}, skipped", dir.display()));
                    } else {
                        slides.insert(id, Arc::new(entry));
                    }
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", dir.display());
                    warnings.push(format!("{}: {e}", dir.display()));
                }
            }
        }
        Ok(Self {
            slides,
            warnings,
            static_dir,
        })
    }

    pub fn slide(&self, id: &str) -> Result<&Arc<SlideEntry>, ServiceError> {
        self.slides.get(id).ok_or_else(|| ServiceError::UnknownSlide(id.to_string()))
    }
}
