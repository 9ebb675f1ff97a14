//! Overlay tiles: 256×256 RGBA PNGs sampled nearest-neighbour from full
//! resolution, level `z` taking every `2^z`-th pixel.

use cytogate_core::{CellClass, Outcome};

use crate::error::ServiceError;
use crate::state::{Snapshot, SlideEntry, TILE_SIZE};

/// Class layer colors, in [`Outcome::all`] order.
pub const PALETTE: [(Outcome, [u8; 3]); 16] = [
    (Outcome::Class(CellClass::Goblet), [31, 119, 180]),
    (Outcome::Class(CellClass::Enteroendocrine), [255, 127, 14]),
    (Outcome::Class(CellClass::Enterocyte), [44, 160, 44]),
    (Outcome::Class(CellClass::Fibroblast), [214, 39, 40]),
    (Outcome::Class(CellClass::StromalUndetermined), [148, 103, 189]),
    (Outcome::Class(CellClass::Myeloid), [140, 86, 75]),
    (Outcome::Class(CellClass::HelperT), [227, 119, 194]),
    (Outcome::Class(CellClass::CytotoxicT), [188, 189, 34]),
    (Outcome::Class(CellClass::TCellReceptor), [23, 190, 207]),
    (Outcome::Class(CellClass::Monocyte), [174, 199, 232]),
    (Outcome::Class(CellClass::Macrophage), [255, 187, 120]),
    (Outcome::Class(CellClass::BCell), [152, 223, 138]),
    (Outcome::Class(CellClass::Leukocyte), [255, 152, 150]),
    (Outcome::Class(CellClass::Progenitor), [255, 215, 0]),
    (Outcome::Excluded, [127, 127, 127]),
    (Outcome::Unlabeled, [255, 255, 255]),
];

pub const POSITIVE_RGB: [u8; 3] = [0, 200, 0];
pub const NEGATIVE_RGB: [u8; 3] = [128, 128, 128];

pub fn palette_color(o: Outcome) -> [u8; 3] {
    PALETTE[o.index()].1
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Layer {
    Channel(String),
    Positivity(String),
    Class,
}

impl std::str::FromStr for Layer {
    type Err = ServiceError;
    fn from_str(s: &str) -> Result<Self, ServiceError> {
        if s == "class" {
            return Ok(Layer::Class);
        }
        match s.split_once(':') {
            Some(("channel", name)) if !name.is_empty() => Ok(Layer::Channel(name.to_string())),
            Some(("positivity", name)) if !name.is_empty() => Ok(Layer::Positivity(name.to_string())),
            _ => Err(ServiceError::BadRequest(format!(
                "layer must be class, channel:<name> or positivity:<stain>, got {s:?}"
            ))),
        }
    }
}

/// RGBA bytes of one tile, row-major.
pub fn render_tile(
    entry: &SlideEntry,
    snap: &Snapshot,
    layer: &Layer,
    z: u32,
    x: u32,
    y: u32,
) -> Result<Vec<u8>, ServiceError> {
    let (w, h) = (entry.bundle.width() as u64, entry.bundle.height() as u64);
    if z >= entry.levels() {
        return Err(ServiceError::TileOutOfRange { z, x, y });
    }
    let span = (TILE_SIZE as u64) << z;
    if x as u64 * span >= w || y as u64 * span >= h {
        return Err(ServiceError::TileOutOfRange { z, x, y });
    }
    let mut out = vec![0u8; TILE_SIZE * TILE_SIZE * 4];
    // full-resolution coordinates of each tile pixel, None outside the slide
    let coord = |i: usize, t: u32, limit: u64| {
        let v = ((t as u64 * TILE_SIZE as u64) + i as u64) << z;
        (v < limit).then_some(v as usize)
    };
    let xs: Vec<Option<usize>> = (0..TILE_SIZE).map(|i| coord(i, x, w)).collect();
    let ys: Vec<Option<usize>> = (0..TILE_SIZE).map(|j| coord(j, y, h)).collect();

    match layer {
        Layer::Channel(name) => {
            let g = entry.channel_grid(name)?;
            let max = entry.bundle.manifest().max_value();
            for (j, fy) in ys.iter().enumerate() {
                let Some(fy) = fy else { continue };
                for (i, fx) in xs.iter().enumerate() {
                    let Some(fx) = fx else { continue };
                    let v = g.get(*fx, *fy) as u32;
                    let gray = ((v.min(max) * 255 + max / 2) / max) as u8;
                    out[(j * TILE_SIZE + i) * 4..][..4].copy_from_slice(&[gray, gray, gray, 255]);
                }
            }
        }
        Layer::Positivity(stain) => {
            let col = snap
                .positivity
                .stain_index(stain)
                .ok_or_else(|| ServiceError::UnknownStain(stain.clone()))?;
            let ids = entry.instance_grid()?;
            paint_instances(&mut out, &ids, &xs, &ys, |id| {
                let row = entry.row_of(id)?;
                Some(if snap.positivity.get(row, col) { POSITIVE_RGB } else { NEGATIVE_RGB })
            });
        }
        Layer::Class => {
            let ids = entry.instance_grid()?;
            paint_instances(&mut out, &ids, &xs, &ys, |id| {
                let row = entry.row_of(id)?;
                Some(palette_color(snap.labels.resolutions[row].outcome))
            });
        }
    }
    Ok(out)
}

fn paint_instances(
    out: &mut [u8],
    ids: &cytogate_core::raster::Grid<u32>,
    xs: &[Option<usize>],
    ys: &[Option<usize>],
    color: impl Fn(u32) -> Option<[u8; 3]>,
) {
    for (j, fy) in ys.iter().enumerate() {
        let Some(fy) = fy else { continue };
        for (i, fx) in xs.iter().enumerate() {
            let Some(fx) = fx else { continue };
            let id = ids.get(*fx, *fy);
            if id == 0 {
                continue;
            }
            if let Some([r, g, b]) = color(id) {
                out[(j * TILE_SIZE + i) * 4..][..4].copy_from_slice(&[r, g, b, 255]);
            }
        }
    }
}

pub fn encode_png(rgba: &[u8]) -> Result<Vec<u8>, ServiceError> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, TILE_SIZE as u32, TILE_SIZE as u32);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        w.write_image_data(rgba)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
    }
    Ok(buf)
}
