//! Synthetic cohort generator: slide bundles whose stain channels gate to
//! chosen classes, plus three render channels in which every class has its
//! own color.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::cascade::ANNOTATION_STAINS;
use crate::classes::{CellClass, Outcome};
use crate::cv::{Cohort, CohortRow, CvError};
use crate::raster::Grid;
use crate::slide::{write_bundle, ChannelRaster, Disease, InstanceMap, Site, SlideError, SlideManifest};
use crate::stats::{StatsError, ThresholdMeta, ThresholdSet};

pub const RENDER_CHANNELS: [&str; 3] = ["he_r", "he_g", "he_b"];
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const TARGETS_FILE: &str = "targets.csv";
pub const COHORT_FILE: &str = "cohort.csv";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Slide(#[from] SlideError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Cv(#[from] CvError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub microns_per_pixel: f64,
    pub spacing_px: u32,
    pub radius_px: u32,
    /// Share of instances given an excluding stain pattern.
    pub excluded_fraction: f64,
    pub threshold: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            width: 320,
            height: 320,
            microns_per_pixel: 0.32,
            spacing_px: 32,
            radius_px: 7,
            excluded_fraction: 0.1,
            threshold: 1500.0,
        }
    }
}

/// Stains positive for an instance meant to become `class`. DAPI is always on.
pub fn class_signature(class: CellClass) -> &'static [&'static str] {
    match class {
        CellClass::Goblet => &["DAPI", "Muc2"],
        CellClass::Enteroendocrine => &["DAPI", "CgA"],
        CellClass::Enterocyte => &["DAPI", "PanCK"],
        CellClass::Fibroblast => &["DAPI", "SMA"],
        CellClass::StromalUndetermined => &["DAPI", "Vimentin"],
        CellClass::Myeloid => &["DAPI", "Lysozyme"],
        CellClass::HelperT => &["DAPI", "CD45", "CD4"],
        CellClass::CytotoxicT => &["DAPI", "CD45", "CD8"],
        CellClass::TCellReceptor => &["DAPI", "CD3d"],
        CellClass::Monocyte => &["DAPI", "CD11B"],
        CellClass::Macrophage => &["DAPI", "CD68"],
        CellClass::BCell => &["DAPI", "CD20"],
        CellClass::Leukocyte => &["DAPI", "CD45"],
        CellClass::Progenitor => &["DAPI", "Sox9", "NaKATPase"],
    }
}

/// Stain patterns the cascade excludes.
pub const EXCLUDED_SIGNATURES: [&[&str]; 2] = [&["DAPI"], &["DAPI", "NaKATPase", "Vimentin"]];

/// Render color with components in {0, 0.5, 1} and a maximum of 1, so
/// per-patch min-max normalization keeps the colors on one scale.
pub fn render_color(outcome: Outcome) -> [f64; 3] {
    let c = match outcome {
        Outcome::Class(c) => c,
        _ => return [1.0, 0.5, 1.0],
    };
    match c {
        CellClass::Goblet => [1.0, 0.0, 0.0],
        CellClass::Enteroendocrine => [0.0, 1.0, 0.0],
        CellClass::Enterocyte => [0.0, 0.0, 1.0],
        CellClass::Fibroblast => [1.0, 1.0, 0.0],
        CellClass::StromalUndetermined => [1.0, 0.0, 1.0],
        CellClass::Myeloid => [0.0, 1.0, 1.0],
        CellClass::HelperT => [1.0, 0.5, 0.0],
        CellClass::CytotoxicT => [1.0, 0.0, 0.5],
        CellClass::TCellReceptor => [0.5, 1.0, 0.0],
        CellClass::Monocyte => [0.0, 1.0, 0.5],
        CellClass::Macrophage => [0.5, 0.0, 1.0],
        CellClass::BCell => [0.0, 0.5, 1.0],
        CellClass::Leukocyte => [1.0, 1.0, 0.5],
        CellClass::Progenitor => [0.5, 1.0, 1.0],
    }
}

const RENDER_SCALE: f64 = 20_000.0;
const BACKGROUND: f64 = 50.0;

/// 28 slides from 20 patients: 14 with one slide, 5 with two, 1 with four;
/// 14 slides per site and alternating disease status by patient.
pub fn cohort_layout() -> Vec<CohortRow> {
    let mut rows = Vec::new();
    let mut slide = 0;
    let mut push = |rows: &mut Vec<CohortRow>, patient: usize, site: Site| {
        slide += 1;
        rows.push(CohortRow {
            slide_id: format!("s{slide:02}"),
            patient_id: format!("p{patient:02}"),
            site,
            disease: if patient % 2 == 1 { Disease::Diseased } else { Disease::Normal },
        });
    };
    for p in 1..=14 {
        let site = if p <= 7 { Site::AscendingColon } else { Site::TerminalIleum };
        push(&mut rows, p, site);
    }
    for p in 15..=19 {
        push(&mut rows, p, Site::AscendingColon);
        push(&mut rows, p, Site::TerminalIleum);
    }
    for site in [Site::AscendingColon, Site::TerminalIleum, Site::AscendingColon, Site::TerminalIleum] {
        push(&mut rows, 20, site);
    }
    rows
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthInstance {
    pub id: u32,
    pub target: Outcome,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Clone, Debug)]
pub struct SynthSlide {
    pub row: CohortRow,
    pub instances: Vec<SynthInstance>,
}

#[derive(Clone, Debug)]
pub struct SynthCohort {
    pub cohort: Cohort,
    pub slides: Vec<SynthSlide>,
}

fn slide_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64 + 1)
}

/// Writes one bundle directory per slide plus `cohort.csv` under `root`.
pub fn generate_cohort(root: &Path, cfg: &SynthConfig) -> Result<SynthCohort, SynthError> {
    std::fs::create_dir_all(root)?;
    let rows = cohort_layout();
    let cohort = Cohort::new(rows.clone())?;
    cohort.write_csv(std::fs::File::create(root.join(COHORT_FILE))?)?;
    let slides = rows
        .into_iter()
        .enumerate()
        .map(|(i, row)| generate_slide(&root.join(&row.slide_id), row, cfg, slide_seed(cfg.seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SynthCohort { cohort, slides })
}

/// Writes one bundle with its thresholds and a `targets.csv` of intended outcomes.
pub fn generate_slide(dir: &Path, row: CohortRow, cfg: &SynthConfig, seed: u64) -> Result<SynthSlide, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let spacing = cfg.spacing_px as f64;
    let r = cfg.radius_px as f64;
    let jitter = ((spacing - 2.0 * r - 2.0) / 2.0).max(0.0);

    let cols = (cfg.width / cfg.spacing_px) as usize;
    let rows_n = (cfg.height / cfg.spacing_px) as usize;
    let n = cols * rows_n;
    let n_excluded = (n as f64 * cfg.excluded_fraction).round() as usize;
    let offset = rng.random_range(0..CellClass::ALL.len());
    let mut targets: Vec<Outcome> = (0..n)
        .map(|i| {
            if i < n_excluded {
                Outcome::Excluded
            } else {
                Outcome::Class(CellClass::ALL[(i + offset) % CellClass::ALL.len()])
            }
        })
        .collect();
    targets.shuffle(&mut rng);

    let mut ids = Grid::<u32>::new(w, h);
    let nstains = ANNOTATION_STAINS.len();
    let mut stain_px: Vec<Grid<f64>> = (0..nstains).map(|_| Grid::filled(w, h, BACKGROUND)).collect();
    let mut render_px: Vec<Grid<f64>> = (0..3).map(|_| Grid::filled(w, h, 0.0)).collect();
    let pixel_noise = Normal::new(0.0, 40.0).expect("valid sd");
    let render_noise = Normal::new(1.0, 0.01).expect("valid sd");
    let mut instances = Vec::with_capacity(n);

    for (k, &target) in targets.iter().enumerate() {
        let id = k as u32 + 1;
        let (gx, gy) = (k % cols, k / cols);
        let cx = (gx as f64 + 0.5) * spacing + rng.random_range(-jitter..=jitter);
        let cy = (gy as f64 + 0.5) * spacing + rng.random_range(-jitter..=jitter);
        let positive: &[&str] = match target {
            Outcome::Class(c) => class_signature(c),
            _ => EXCLUDED_SIGNATURES[rng.random_range(0..EXCLUDED_SIGNATURES.len())],
        };
        let levels: Vec<f64> = ANNOTATION_STAINS
            .iter()
            .map(|s| {
                if positive.contains(s) {
                    rng.random_range(2500.0..3500.0)
                } else {
                    rng.random_range(200.0..600.0)
                }
            })
            .collect();
        let color = render_color(target);
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w - 1));
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                ids.set(x, y, id);
                for (g, &level) in stain_px.iter_mut().zip(&levels) {
                    g.set(x, y, level + pixel_noise.sample(&mut rng));
                }
                for (g, &c) in render_px.iter_mut().zip(&color) {
                    g.set(x, y, c * RENDER_SCALE * render_noise.sample(&mut rng));
                }
            }
        }
        instances.push(SynthInstance { id, target, cx, cy });
    }

    let to_u16 = |g: &Grid<f64>| g.map(|v| v.round().clamp(0.0, 65535.0) as u16);
    let mut channels: Vec<ChannelRaster> = ANNOTATION_STAINS
        .iter()
        .zip(&stain_px)
        .map(|(name, g)| ChannelRaster {
            name: name.to_string(),
            grid: to_u16(g),
        })
        .collect();
    channels.extend(RENDER_CHANNELS.iter().zip(&render_px).map(|(name, g)| ChannelRaster {
        name: name.to_string(),
        grid: to_u16(g),
    }));
    let manifest = SlideManifest {
        slide_id: row.slide_id.clone(),
        patient_id: row.patient_id.clone(),
        site: row.site,
        disease: row.disease,
        width_px: cfg.width,
        height_px: cfg.height,
        microns_per_pixel: cfg.microns_per_pixel,
        bit_depth: 16,
        channels: vec![],
        instance_map: None,
        channel_files: Default::default(),
    };
    write_bundle(dir, &manifest, &channels, Some(&InstanceMap::new(ids, cfg.microns_per_pixel)))?;

    let mut th = ThresholdSet::new();
    for s in ANNOTATION_STAINS {
        th.insert(s, cfg.threshold)?;
    }
    th.meta = ThresholdMeta {
        author: Some("synth".into()),
        updated: None,
        note: None,
    };
    th.save(&dir.join(THRESHOLDS_FILE))?;

    let mut out = csv::Writer::from_path(dir.join(TARGETS_FILE))?;
    out.write_record(["instance_id", "class"])?;
    for inst in &instances {
        out.write_record([inst.id.to_string(), inst.target.as_str().to_string()])?;
    }
    out.flush()?;
    Ok(SynthSlide { row, instances })
}
