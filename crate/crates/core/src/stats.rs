//! Per-instance geometry and mean stain intensity, streamed over tiles, and
//! the stain-wise thresholding that turns means into positivity calls.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::slide::{SlideBundle, SlideError};

pub const DEFAULT_TILE: usize = 512;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error(transparent)]
    Slide(#[from] SlideError),
    #[error("bundle has no instance map")]
    NoInstanceMap,
    #[error("tile size must be positive")]
    ZeroTile,
    #[error("threshold set references stain {0:?} which has no column in the stats table")]
    MissingStatsColumn(String),
    #[error("threshold for {stain:?} must be finite and >= 0, got {value}")]
    InvalidThreshold { stain: String, value: f64 },
    #[error("malformed threshold file: {0}")]
    ThresholdFormat(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed table: {0}")]
    Table(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StatsError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceStats {
    pub id: u32,
    pub area_px: u64,
    pub centroid_x: f64,
    pub centroid_y: f64,
    /// Mean intensity per channel, in the table's channel order.
    pub means: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceStatsTable {
    pub channels: Vec<String>,
    /// Sorted by instance id.
    pub rows: Vec<InstanceStats>,
}

impl InstanceStatsTable {
    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&InstanceStats> {
        self.rows
            .binary_search_by_key(&id, |r| r.id)
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn column(&self, channel: &str) -> Option<Vec<f64>> {
        let c = self.channel_index(channel)?;
        Some(self.rows.iter().map(|r| r.means[c]).collect())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec![
            "instance_id".to_string(),
            "area_px".into(),
            "centroid_x".into(),
            "centroid_y".into(),
        ];
        header.extend(self.channels.iter().cloned());
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.id.to_string(),
                r.area_px.to_string(),
                r.centroid_x.to_string(),
                r.centroid_y.to_string(),
            ];
            rec.extend(r.means.iter().map(|m| m.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let fixed = ["instance_id", "area_px", "centroid_x", "centroid_y"];
        if header.len() < 4 || header.iter().take(4).ne(fixed.iter().copied()) {
            return Err(StatsError::Table(format!(
                "stats header must start with {}",
                fixed.join(",")
            )));
        }
        let channels: Vec<String> = header.iter().skip(4).map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| StatsError::Table(format!("column {}: {e}", header[i].to_string())))
            };
            let id = rec[0]
                .parse::<u32>()
                .map_err(|e| StatsError::Table(format!("instance_id: {e}")))?;
            let area_px = rec[1]
                .parse::<u64>()
                .map_err(|e| StatsError::Table(format!("area_px: {e}")))?;
            let means = (4..rec.len()).map(num).collect::<Result<Vec<_>>>()?;
            rows.push(InstanceStats {
                id,
                area_px,
                centroid_x: num(2)?,
                centroid_y: num(3)?,
                means,
            });
        }
        rows.sort_by_key(|r| r.id);
        Ok(Self { channels, rows })
    }
}

#[derive(Clone, Debug, Default)]
struct Accumulator {
    area: u64,
    sum_x: u64,
    sum_y: u64,
    sums: Vec<u64>,
}

impl Accumulator {
    fn merge(&mut self, other: &Accumulator) {
        self.area += other.area;
        self.sum_x += other.sum_x;
        self.sum_y += other.sum_y;
        if self.sums.is_empty() {
            self.sums = other.sums.clone();
        } else {
            for (a, b) in self.sums.iter_mut().zip(&other.sums) {
                *a += b;
            }
        }
    }
}

/// Stats over the given channels with the default tile size.
pub fn compute_stats(bundle: &SlideBundle, channels: &[&str]) -> Result<InstanceStatsTable> {
    compute_stats_tiled(bundle, channels, DEFAULT_TILE, DEFAULT_TILE)
}

/// Streams the bundle in bands of `tile_h` rows, aggregates each
/// `tile_w`-wide tile of a band independently and merges the integer partial
/// sums. Means are formed once at the end, so the result does not depend on
/// the tiling.
pub fn compute_stats_tiled(
    bundle: &SlideBundle,
    channels: &[&str],
    tile_w: usize,
    tile_h: usize,
) -> Result<InstanceStatsTable> {
    if tile_w == 0 || tile_h == 0 {
        return Err(StatsError::ZeroTile);
    }
    if !bundle.has_instance_map() {
        return Err(StatsError::NoInstanceMap);
    }
    let width = bundle.width() as usize;
    let height = bundle.height() as usize;
    let nch = channels.len();

    let mut ids_rows = bundle.instance_rows()?;
    let mut chan_rows = channels
        .iter()
        .map(|c| bundle.channel_rows(c))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let mut totals: BTreeMap<u32, Accumulator> = BTreeMap::new();
    let mut band_ids = vec![0u32; width * tile_h];
    let mut band_vals: Vec<Vec<u16>> = vec![vec![0u16; width * tile_h]; nch];

    let mut y0 = 0;
    while y0 < height {
        let rows = tile_h.min(height - y0);
        for r in 0..rows {
            ids_rows.read_row(&mut band_ids[r * width..(r + 1) * width])?;
            for (c, reader) in chan_rows.iter_mut().enumerate() {
                reader.read_row(&mut band_vals[c][r * width..(r + 1) * width])?;
            }
        }
        let tiles: Vec<usize> = (0..width).step_by(tile_w).collect();
        let partials: Vec<HashMap<u32, Accumulator>> = tiles
            .par_iter()
            .map(|&x0| {
                let x1 = (x0 + tile_w).min(width);
                let mut acc: HashMap<u32, Accumulator> = HashMap::new();
                for r in 0..rows {
                    for x in x0..x1 {
                        let id = band_ids[r * width + x];
                        if id == 0 {
                            continue;
                        }
                        let a = acc.entry(id).or_insert_with(|| Accumulator {
                            sums: vec![0; nch],
                            ..Default::default()
                        });
                        a.area += 1;
                        a.sum_x += x as u64;
                        a.sum_y += (y0 + r) as u64;
                        for (c, s) in a.sums.iter_mut().enumerate() {
                            *s += band_vals[c][r * width + x] as u64;
                        }
                    }
                }
                acc
            })
            .collect();
        for partial in &partials {
            for (id, a) in partial {
                totals.entry(*id).or_default().merge(a);
            }
        }
        y0 += rows;
    }

    let rows = totals
        .into_iter()
        .map(|(id, a)| {
            let area = a.area as f64;
            InstanceStats {
                id,
                area_px: a.area,
                centroid_x: a.sum_x as f64 / area,
                centroid_y: a.sum_y as f64 / area,
                means: a.sums.iter().map(|&s| s as f64 / area).collect(),
            }
        })
        .collect();
    Ok(InstanceStatsTable {
        channels: channels.iter().map(|s| s.to_string()).collect(),
        rows,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub updated: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Stain → threshold, one set per slide. Stored as a flat JSON object with an
/// optional `_meta` entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ThresholdSet {
    pub values: BTreeMap<String, f64>,
    pub meta: ThresholdMeta,
}

impl ThresholdSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, stain: impl Into<String>, value: f64) -> Result<()> {
        let stain = stain.into();
        check_threshold(&stain, value)?;
        self.values.insert(stain, value);
        Ok(())
    }

    pub fn get(&self, stain: &str) -> Option<f64> {
        self.values.get(stain).copied()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| StatsError::ThresholdFormat(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| StatsError::ThresholdFormat("expected a JSON object".into()))?;
        let mut set = ThresholdSet::new();
        for (k, v) in obj {
            if k == "_meta" {
                set.meta = serde_json::from_value(v.clone())
                    .map_err(|e| StatsError::ThresholdFormat(format!("_meta: {e}")))?;
                continue;
            }
            let x = v.as_f64().ok_or_else(|| {
                StatsError::ThresholdFormat(format!("threshold for {k:?} is not a number"))
            })?;
            set.insert(k.clone(), x)?;
        }
        Ok(set)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        for (k, v) in &self.values {
            obj.insert(k.clone(), serde_json::json!(v));
        }
        obj.insert(
            "_meta".into(),
            serde_json::to_value(&self.meta).expect("meta serializes"),
        );
        serde_json::Value::Object(obj)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Writes via a temporary file and rename so readers never see a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json_value()).expect("json serializes");
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

pub fn check_threshold(stain: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(StatsError::InvalidThreshold {
            stain: stain.to_string(),
            value,
        })
    }
}

/// Instance × stain positivity calls, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PositivityMatrix {
    pub stains: Vec<String>,
    pub ids: Vec<u32>,
    values: Vec<bool>,
}

impl PositivityMatrix {
    pub fn from_rows(stains: Vec<String>, rows: Vec<(u32, Vec<bool>)>) -> Result<Self> {
        let mut ids = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * stains.len());
        for (id, row) in rows {
            if row.len() != stains.len() {
                return Err(StatsError::Table(format!(
                    "instance {id} has {} calls for {} stains",
                    row.len(),
                    stains.len()
                )));
            }
            ids.push(id);
            values.extend(row);
        }
        Ok(Self { stains, ids, values })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn stain_index(&self, stain: &str) -> Option<usize> {
        self.stains.iter().position(|s| s == stain)
    }

    pub fn row(&self, i: usize) -> &[bool] {
        let k = self.stains.len();
        &self.values[i * k..(i + 1) * k]
    }

    pub fn get(&self, i: usize, stain: usize) -> bool {
        self.values[i * self.stains.len() + stain]
    }

    pub fn positive_count(&self, stain: &str) -> Option<usize> {
        let s = self.stain_index(stain)?;
        Some((0..self.len()).filter(|&i| self.get(i, s)).count())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["instance_id".to_string()];
        header.extend(self.stains.iter().cloned());
        out.write_record(&header)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut rec = vec![id.to_string()];
            rec.extend(self.row(i).iter().map(|&b| if b { "1" } else { "0" }.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("instance_id") {
            return Err(StatsError::Table("positivity header must start with instance_id".into()));
        }
        let stains: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let id = rec[0]
                .parse::<u32>()
                .map_err(|e| StatsError::Table(format!("instance_id: {e}")))?;
            let calls = rec
                .iter()
                .skip(1)
                .map(|v| match v {
                    "1" | "true" => Ok(true),
                    "0" | "false" => Ok(false),
                    other => Err(StatsError::Table(format!("bad positivity value {other:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((id, calls));
        }
        Self::from_rows(stains, rows)
    }
}

/// Positive iff mean ≥ threshold. Columns follow the threshold set's (sorted) stain order.
pub fn apply_thresholds(stats: &InstanceStatsTable, th: &ThresholdSet) -> Result<PositivityMatrix> {
    let mut cols = Vec::with_capacity(th.values.len());
    for (stain, &t) in &th.values {
        check_threshold(stain, t)?;
        let c = stats
            .channel_index(stain)
            .ok_or_else(|| StatsError::MissingStatsColumn(stain.clone()))?;
        cols.push((c, t));
    }
    let stains = th.values.keys().cloned().collect();
    let rows = stats
        .rows
        .iter()
        .map(|r| (r.id, cols.iter().map(|&(c, t)| r.means[c] >= t).collect()))
        .collect();
    PositivityMatrix::from_rows(stains, rows)
}
