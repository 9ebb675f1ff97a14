//! Patch dataset on disk: `patches.f32` (little-endian f32, one record after
//! another, each `channels × 41 × 41` channel-major), `manifest.csv` with one
//! row per record, and `dataset.json` with the shape and per-class counts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classes::CellClass;

use super::extract::Patch;
use super::{PatchError, PATCH_MPP, PATCH_SIZE};

pub const PATCH_FILE: &str = "patches.f32";
pub const MANIFEST_CSV: &str = "manifest.csv";
pub const DATASET_JSON: &str = "dataset.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub index: usize,
    pub slide_id: String,
    pub instance_id: u32,
    pub class: CellClass,
    pub cx_um: f64,
    pub cy_um: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub channels: Vec<String>,
    pub patch_size: usize,
    pub microns_per_pixel: f64,
    pub record_count: usize,
    pub class_counts: BTreeMap<CellClass, usize>,
}

/// Records plus their patch values, held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchDataset {
    pub channels: Vec<String>,
    pub records: Vec<PatchRecord>,
    data: Vec<f32>,
}

impl PatchDataset {
    pub fn new(channels: Vec<String>) -> Self {
        Self {
            channels,
            records: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn feature_len(&self) -> usize {
        self.channels.len() * PATCH_SIZE * PATCH_SIZE
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, patch: Patch) -> Result<(), PatchError> {
        if patch.values.len() != self.feature_len() {
            return Err(PatchError::ShapeMismatch {
                expected: self.feature_len(),
                found: patch.values.len(),
            });
        }
        self.records.push(PatchRecord {
            index: self.records.len(),
            slide_id: patch.slide_id,
            instance_id: patch.instance_id,
            class: patch.class,
            cx_um: patch.center_um.0,
            cy_um: patch.center_um.1,
        });
        self.data.extend_from_slice(&patch.values);
        Ok(())
    }

    pub fn features(&self, i: usize) -> &[f32] {
        let n = self.feature_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn classes(&self) -> Vec<CellClass> {
        self.records.iter().map(|r| r.class).collect()
    }

    pub fn class_counts(&self) -> BTreeMap<CellClass, usize> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            *m.entry(r.class).or_insert(0) += 1;
        }
        m
    }

    /// Appends another dataset with the same channels, renumbering its records.
    pub fn extend(&mut self, other: PatchDataset) -> Result<(), PatchError> {
        if other.channels != self.channels {
            return Err(PatchError::ChannelMismatch {
                expected: self.channels.clone(),
                found: other.channels,
            });
        }
        let base = self.records.len();
        self.records.extend(other.records.into_iter().map(|mut r| {
            r.index += base;
            r
        }));
        self.data.extend(other.data);
        Ok(())
    }

    /// Keeps only the records for which `keep` is true.
    pub fn filter(&self, keep: impl Fn(&PatchRecord) -> bool) -> PatchDataset {
        let mut out = PatchDataset::new(self.channels.clone());
        for (i, r) in self.records.iter().enumerate() {
            if keep(r) {
                let mut r = r.clone();
                r.index = out.records.len();
                out.records.push(r);
                out.data.extend_from_slice(self.features(i));
            }
        }
        out
    }

    pub fn info(&self) -> DatasetInfo {
        DatasetInfo {
            channels: self.channels.clone(),
            patch_size: PATCH_SIZE,
            microns_per_pixel: PATCH_MPP,
            record_count: self.records.len(),
            class_counts: self.class_counts(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), PatchError> {
        std::fs::create_dir_all(dir)?;
        let mut blob = BufWriter::new(File::create(dir.join(PATCH_FILE))?);
        for v in &self.data {
            blob.write_all(&v.to_le_bytes())?;
        }
        blob.flush()?;
        let mut csv = csv::Writer::from_path(dir.join(MANIFEST_CSV))?;
        for r in &self.records {
            csv.serialize(r)?;
        }
        csv.flush()?;
        let info = serde_json::to_string_pretty(&self.info()).expect("info serializes");
        std::fs::write(dir.join(DATASET_JSON), info)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, PatchError> {
        let info: DatasetInfo = serde_json::from_str(&std::fs::read_to_string(dir.join(DATASET_JSON))?)
            .map_err(|e| PatchError::Format(format!("{DATASET_JSON}: {e}")))?;
        if info.patch_size != PATCH_SIZE {
            return Err(PatchError::Format(format!("unsupported patch size {}", info.patch_size)));
        }
        let mut rdr = csv::Reader::from_path(dir.join(MANIFEST_CSV))?;
        let records = rdr.deserialize().collect::<Result<Vec<PatchRecord>, _>>()?;
        let mut bytes = Vec::new();
        BufReader::new(File::open(dir.join(PATCH_FILE))?).read_to_end(&mut bytes)?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let ds = Self {
            channels: info.channels,
            records,
            data,
        };
        if ds.data.len() != ds.records.len() * ds.feature_len() || bytes.len() % 4 != 0 {
            return Err(PatchError::Format(format!(
                "{PATCH_FILE} holds {} bytes, expected {} records of {} floats",
                bytes.len(),
                ds.records.len(),
                ds.feature_len()
            )));
        }
        if info.record_count != ds.records.len() || info.class_counts != ds.class_counts() {
            return Err(PatchError::Format("dataset.json counts disagree with manifest.csv".into()));
        }
        Ok(ds)
    }
}
