//! Slide-bundle on-disk format and tile-level access.
//!
//! A bundle is a directory holding `manifest.json`, one grayscale PNG per
//! channel (8- or 16-bit, per the manifest) and an optional instance map
//! stored as headerless little-endian `u32`, row-major.
//!
//! Opening a bundle only reads the manifest and the PNG headers. Pixel data is
//! decoded row by row on demand, so a full raster never has to sit in memory
//! unless the caller asks for one.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Grid;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum SlideError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no {MANIFEST_FILE} in {0}")]
    MissingManifest(PathBuf),
    #[error("corrupt manifest {path}: {reason}")]
    CorruptManifest { path: PathBuf, reason: String },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("unknown bit depth {0}, expected 8 or 16")]
    UnknownBitDepth(u8),
    #[error("{file}: raster is {found_w}x{found_h}, manifest says {expected_w}x{expected_h}")]
    DimensionMismatch {
        file: String,
        found_w: u64,
        found_h: u64,
        expected_w: u64,
        expected_h: u64,
    },
    #[error("{file}: stored bit depth {found} does not match manifest bit depth {expected}")]
    BitDepthMismatch { file: String, found: u8, expected: u8 },
    #[error("{file}: expected a single-channel grayscale png")]
    NotGrayscale { file: String },
    #[error("png decode error in {path}: {source}")]
    PngDecode {
        path: PathBuf,
        #[source]
        source: png::DecodingError,
    },
    #[error("png encode error in {path}: {source}")]
    PngEncode {
        path: PathBuf,
        #[source]
        source: png::EncodingError,
    },
    #[error("unknown channel {0:?}")]
    UnknownChannel(String),
    #[error("tile at ({x}, {y}) of size {width}x{height} does not intersect the {image_w}x{image_h} image")]
    TileOutOfBounds {
        x: i64,
        y: i64,
        width: u32,
        height: u32,
        image_w: u32,
        image_h: u32,
    },
    #[error("bundle has no instance map")]
    NoInstanceMap,
    #[error("empty channel list")]
    EmptyChannelList,
    #[error("channel {channel}: value {value} exceeds the {bit_depth}-bit range")]
    ValueOutOfRange {
        channel: String,
        value: u32,
        bit_depth: u8,
    },
}

pub type Result<T> = std::result::Result<T, SlideError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SlideError + '_ {
    move |source| SlideError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    AscendingColon,
    TerminalIleum,
    Other,
}

impl Site {
    pub fn as_str(self) -> &'static str {
        match self {
            Site::AscendingColon => "ascending_colon",
            Site::TerminalIleum => "terminal_ileum",
            Site::Other => "other",
        }
    }
}

impl std::str::FromStr for Site {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ascending_colon" => Ok(Site::AscendingColon),
            "terminal_ileum" => Ok(Site::TerminalIleum),
            "other" => Ok(Site::Other),
            _ => Err(format!("unknown site {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disease {
    Normal,
    Diseased,
}

impl Disease {
    pub fn as_str(self) -> &'static str {
        match self {
            Disease::Normal => "normal",
            Disease::Diseased => "diseased",
        }
    }
}

impl std::str::FromStr for Disease {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "normal" => Ok(Disease::Normal),
            "diseased" => Ok(Disease::Diseased),
            _ => Err(format!("unknown disease status {s:?}")),
        }
    }
}

/// Contents of `manifest.json`. The key set is fixed; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlideManifest {
    pub slide_id: String,
    pub patient_id: String,
    pub site: Site,
    pub disease: Disease,
    pub width_px: u32,
    pub height_px: u32,
    pub microns_per_pixel: f64,
    pub bit_depth: u8,
    pub channels: Vec<String>,
    /// File name of the raw instance map, relative to the bundle directory.
    pub instance_map: Option<String>,
    pub channel_files: BTreeMap<String, String>,
}

impl SlideManifest {
    pub fn validate(&self) -> Result<()> {
        if self.bit_depth != 8 && self.bit_depth != 16 {
            return Err(SlideError::UnknownBitDepth(self.bit_depth));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(SlideError::InvalidManifest(format!(
                "dimensions must be positive, got {}x{}",
                self.width_px, self.height_px
            )));
        }
        if !(self.microns_per_pixel.is_finite() && self.microns_per_pixel > 0.0) {
            return Err(SlideError::InvalidManifest(format!(
                "microns_per_pixel must be positive, got {}",
                self.microns_per_pixel
            )));
        }
        let mut seen = BTreeSet::new();
        for name in &self.channels {
            if !seen.insert(name) {
                return Err(SlideError::InvalidManifest(format!(
                    "duplicate channel name {name:?}"
                )));
            }
            if !self.channel_files.contains_key(name) {
                return Err(SlideError::InvalidManifest(format!(
                    "channel {name:?} has no entry in channel_files"
                )));
            }
        }
        if let Some(extra) = self.channel_files.keys().find(|k| !seen.contains(k)) {
            return Err(SlideError::InvalidManifest(format!(
                "channel_files lists {extra:?} which is not in channels"
            )));
        }
        Ok(())
    }

    pub fn max_value(&self) -> u32 {
        (1u32 << self.bit_depth) - 1
    }

    pub fn pixel_count(&self) -> usize {
        self.width_px as usize * self.height_px as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRaster {
    pub name: String,
    pub grid: Grid<u16>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceMap {
    pub grid: Grid<u32>,
    pub microns_per_pixel: f64,
}

impl InstanceMap {
    pub fn new(grid: Grid<u32>, microns_per_pixel: f64) -> Self {
        Self {
            grid,
            microns_per_pixel,
        }
    }

    /// Sorted nonzero ids present in the map.
    pub fn ids(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.grid.data.iter().copied().filter(|&v| v != 0).collect();
        set.into_iter().collect()
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn read_raw(path: &Path, width: usize, height: usize, microns_per_pixel: f64) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        if bytes.len() != width * height * 4 {
            return Err(raw_size_mismatch(path, bytes.len() as u64, width, height));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self::new(Grid::from_vec(width, height, data), microns_per_pixel))
    }

    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        for v in &self.grid.data {
            w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
        }
        w.flush().map_err(io_err(path))
    }
}

fn raw_size_mismatch(path: &Path, len: u64, width: usize, height: usize) -> SlideError {
    let pixels = len / 4;
    let found_h = if width > 0 { pixels / width as u64 } else { 0 };
    SlideError::DimensionMismatch {
        file: path.display().to_string(),
        found_w: width as u64,
        found_h,
        expected_w: width as u64,
        expected_h: height as u64,
    }
}

/// Tile origin may be negative; the tile only needs to overlap the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileRequest {
    pub x: i64,
    pub y: i64,
    pub width: u32,
    pub height: u32,
}

impl TileRequest {
    pub fn new(x: i64, y: i64, width: u32, height: u32) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    /// In-bounds part of the tile as `(x0, y0, x1, y1)` in image coordinates, if any.
    fn clip(&self, image_w: u32, image_h: u32) -> Option<(usize, usize, usize, usize)> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = (self.x + self.width as i64).min(image_w as i64);
        let y1 = (self.y + self.height as i64).min(image_h as i64);
        (x0 < x1 && y0 < y1).then(|| (x0 as usize, y0 as usize, x1 as usize, y1 as usize))
    }
}

/// An opened bundle. Immutable after open; clones share nothing mutable, so
/// concurrent readers can each hold one.
#[derive(Clone, Debug)]
pub struct SlideBundle {
    root: PathBuf,
    manifest: SlideManifest,
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<SlideBundle> {
    SlideBundle::open(path)
}

impl SlideBundle {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let root = path.as_ref().to_path_buf();
        let manifest_path = root.join(MANIFEST_FILE);
        if !manifest_path.is_file() {
            return Err(SlideError::MissingManifest(root));
        }
        let text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let manifest: SlideManifest =
            serde_json::from_str(&text).map_err(|e| SlideError::CorruptManifest {
                path: manifest_path.clone(),
                reason: e.to_string(),
            })?;
        manifest.validate()?;

        let bundle = Self { root, manifest };
        for name in &bundle.manifest.channels {
            bundle.check_channel_header(name)?;
        }
        if let Some(file) = &bundle.manifest.instance_map {
            let p = bundle.root.join(file);
            let len = std::fs::metadata(&p).map_err(io_err(&p))?.len();
            let expected = bundle.manifest.pixel_count() as u64 * 4;
            if len != expected {
                return Err(raw_size_mismatch(
                    &p,
                    len,
                    bundle.manifest.width_px as usize,
                    bundle.manifest.height_px as usize,
                ));
            }
        }
        Ok(bundle)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &SlideManifest {
        &self.manifest
    }

    pub fn width(&self) -> u32 {
        self.manifest.width_px
    }

    pub fn height(&self) -> u32 {
        self.manifest.height_px
    }

    pub fn channels(&self) -> &[String] {
        &self.manifest.channels
    }

    pub fn has_channel(&self, name: &str) -> bool {
        self.manifest.channel_files.contains_key(name)
    }

    pub fn has_instance_map(&self) -> bool {
        self.manifest.instance_map.is_some()
    }

    fn channel_path(&self, name: &str) -> Result<PathBuf> {
        self.manifest
            .channel_files
            .get(name)
            .map(|f| self.root.join(f))
            .ok_or_else(|| SlideError::UnknownChannel(name.to_string()))
    }

    fn instance_map_path(&self) -> Result<PathBuf> {
        self.manifest
            .instance_map
            .as_ref()
            .map(|f| self.root.join(f))
            .ok_or(SlideError::NoInstanceMap)
    }

    fn check_channel_header(&self, name: &str) -> Result<()> {
        let path = self.channel_path(name)?;
        let reader = ChannelRowReader::open(&path)?;
        let (w, h) = (reader.width, reader.height);
        if w != self.manifest.width_px || h != self.manifest.height_px {
            return Err(SlideError::DimensionMismatch {
                file: path.display().to_string(),
                found_w: w as u64,
                found_h: h as u64,
                expected_w: self.manifest.width_px as u64,
                expected_h: self.manifest.height_px as u64,
            });
        }
        if reader.bit_depth != self.manifest.bit_depth {
            return Err(SlideError::BitDepthMismatch {
                file: path.display().to_string(),
                found: reader.bit_depth,
                expected: self.manifest.bit_depth,
            });
        }
        Ok(())
    }

    /// Sequential row reader over one channel.
    pub fn channel_rows(&self, name: &str) -> Result<ChannelRowReader> {
        ChannelRowReader::open(&self.channel_path(name)?)
    }

    /// Sequential row reader over the instance map.
    pub fn instance_rows(&self) -> Result<InstanceRowReader> {
        let path = self.instance_map_path()?;
        let file = File::open(&path).map_err(io_err(&path))?;
        Ok(InstanceRowReader {
            reader: BufReader::new(file),
            path,
            width: self.manifest.width_px as usize,
            buf: Vec::new(),
        })
    }

    fn check_tile(&self, req: &TileRequest) -> Result<(usize, usize, usize, usize)> {
        req.clip(self.width(), self.height())
            .filter(|_| req.width > 0 && req.height > 0)
            .ok_or(SlideError::TileOutOfBounds {
                x: req.x,
                y: req.y,
                width: req.width,
                height: req.height,
                image_w: self.width(),
                image_h: self.height(),
            })
    }

    /// Reads one tile of a channel. Pixels outside the image are 0.
    pub fn read_tile(&self, channel: &str, req: TileRequest) -> Result<Grid<u16>> {
        let path = self.channel_path(channel)?;
        let (x0, y0, x1, y1) = self.check_tile(&req)?;
        let mut out = Grid::new(req.width as usize, req.height as usize);
        let mut rows = ChannelRowReader::open(&path)?;
        let mut row = vec![0u16; self.width() as usize];
        for y in 0..y1 {
            rows.read_row(&mut row)?;
            if y < y0 {
                continue;
            }
            let ty = (y as i64 - req.y) as usize;
            for x in x0..x1 {
                let tx = (x as i64 - req.x) as usize;
                out.set(tx, ty, row[x]);
            }
        }
        Ok(out)
    }

    /// Reads one tile of the instance map. Pixels outside the image are 0.
    pub fn read_instance_tile(&self, req: TileRequest) -> Result<Grid<u32>> {
        let path = self.instance_map_path()?;
        let (x0, y0, x1, y1) = self.check_tile(&req)?;
        let mut out = Grid::new(req.width as usize, req.height as usize);
        let mut file = File::open(&path).map_err(io_err(&path))?;
        let width = self.width() as usize;
        let span = x1 - x0;
        let mut buf = vec![0u8; span * 4];
        for y in y0..y1 {
            let offset = ((y * width + x0) * 4) as u64;
            file.seek(SeekFrom::Start(offset)).map_err(io_err(&path))?;
            file.read_exact(&mut buf).map_err(io_err(&path))?;
            let ty = (y as i64 - req.y) as usize;
            for (i, c) in buf.chunks_exact(4).enumerate() {
                let tx = (x0 + i) as i64 - req.x;
                out.set(tx as usize, ty, u32::from_le_bytes([c[0], c[1], c[2], c[3]]));
            }
        }
        Ok(out)
    }

    pub fn read_channel(&self, name: &str) -> Result<ChannelRaster> {
        let mut rows = self.channel_rows(name)?;
        let w = self.width() as usize;
        let h = self.height() as usize;
        let mut data = vec![0u16; w * h];
        for y in 0..h {
            rows.read_row(&mut data[y * w..(y + 1) * w])?;
        }
        Ok(ChannelRaster {
            name: name.to_string(),
            grid: Grid::from_vec(w, h, data),
        })
    }

    pub fn read_instance_map(&self) -> Result<InstanceMap> {
        let path = self.instance_map_path()?;
        InstanceMap::read_raw(
            &path,
            self.width() as usize,
            self.height() as usize,
            self.manifest.microns_per_pixel,
        )
    }

    /// Pixel-wise sum of channels, accumulated in `u32` and clamped to the
    /// bundle's bit-depth maximum.
    pub fn merge_channels_sum(&self, channels: &[&str]) -> Result<ChannelRaster> {
        if channels.is_empty() {
            return Err(SlideError::EmptyChannelList);
        }
        let mut readers = channels
            .iter()
            .map(|c| self.channel_rows(c))
            .collect::<Result<Vec<_>>>()?;
        let w = self.width() as usize;
        let h = self.height() as usize;
        let max = self.manifest.max_value();
        let mut acc = vec![0u32; w];
        let mut row = vec![0u16; w];
        let mut data = Vec::with_capacity(w * h);
        for _ in 0..h {
            acc.iter_mut().for_each(|a| *a = 0);
            for r in readers.iter_mut() {
                r.read_row(&mut row)?;
                for (a, &v) in acc.iter_mut().zip(&row) {
                    *a += v as u32;
                }
            }
            data.extend(acc.iter().map(|&a| a.min(max) as u16));
        }
        Ok(ChannelRaster {
            name: channels.join("+"),
            grid: Grid::from_vec(w, h, data),
        })
    }
}

/// Streaming PNG row decoder yielding native `u16` samples.
pub struct ChannelRowReader {
    reader: png::Reader<BufReader<File>>,
    path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub bit_depth: u8,
}

impl ChannelRowReader {
    fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::IDENTITY);
        let reader = decoder.read_info().map_err(|source| SlideError::PngDecode {
            path: path.to_path_buf(),
            source,
        })?;
        let info = reader.info();
        if info.color_type != png::ColorType::Grayscale {
            return Err(SlideError::NotGrayscale {
                file: path.display().to_string(),
            });
        }
        let bit_depth = match info.bit_depth {
            png::BitDepth::Eight => 8,
            png::BitDepth::Sixteen => 16,
            other => {
                return Err(SlideError::UnknownBitDepth(other as u8));
            }
        };
        let (width, height) = (info.width, info.height);
        Ok(Self {
            reader,
            path: path.to_path_buf(),
            width,
            height,
            bit_depth,
        })
    }

    /// Decodes the next row into `out` (length = image width).
    pub fn read_row(&mut self, out: &mut [u16]) -> Result<()> {
        let path = &self.path;
        let row = self
            .reader
            .next_row()
            .map_err(|source| SlideError::PngDecode {
                path: path.clone(),
                source,
            })?
            .ok_or_else(|| SlideError::Io {
                path: path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "png ended early"),
            })?;
        let data = row.data();
        if self.bit_depth == 16 {
            for (o, c) in out.iter_mut().zip(data.chunks_exact(2)) {
                *o = u16::from_be_bytes([c[0], c[1]]);
            }
        } else {
            for (o, &b) in out.iter_mut().zip(data) {
                *o = b as u16;
            }
        }
        Ok(())
    }
}

pub struct InstanceRowReader {
    reader: BufReader<File>,
    path: PathBuf,
    width: usize,
    buf: Vec<u8>,
}

impl InstanceRowReader {
    pub fn read_row(&mut self, out: &mut [u32]) -> Result<()> {
        self.buf.resize(self.width * 4, 0);
        self.reader
            .read_exact(&mut self.buf)
            .map_err(io_err(&self.path))?;
        for (o, c) in out.iter_mut().zip(self.buf.chunks_exact(4)) {
            *o = u32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
        Ok(())
    }
}

/// Writes a single-channel grayscale PNG at the given bit depth.
pub fn write_png_gray(path: &Path, grid: &Grid<u16>, bit_depth: u8) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), grid.width as u32, grid.height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    let bytes: Vec<u8> = match bit_depth {
        16 => {
            encoder.set_depth(png::BitDepth::Sixteen);
            grid.data.iter().flat_map(|v| v.to_be_bytes()).collect()
        }
        8 => {
            encoder.set_depth(png::BitDepth::Eight);
            grid.data.iter().map(|&v| v as u8).collect()
        }
        other => return Err(SlideError::UnknownBitDepth(other)),
    };
    let enc_err = |source| SlideError::PngEncode {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = encoder.write_header().map_err(enc_err)?;
    writer.write_image_data(&bytes).map_err(enc_err)?;
    writer.finish().map_err(enc_err)
}

/// Writes a complete bundle. `channel_files` and `instance_map` in the
/// manifest are filled in from the rasters given.
pub fn write_bundle(
    dir: impl AsRef<Path>,
    manifest: &SlideManifest,
    channels: &[ChannelRaster],
    instance_map: Option<&InstanceMap>,
) -> Result<SlideBundle> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = manifest.clone();
    manifest.channels = channels.iter().map(|c| c.name.clone()).collect();
    manifest.channel_files = channels
        .iter()
        .map(|c| (c.name.clone(), format!("{}.png", sanitize_file_stem(&c.name))))
        .collect();
    manifest.instance_map = instance_map.map(|_| "instances.u32".to_string());
    manifest.validate()?;

    let (w, h) = (manifest.width_px as usize, manifest.height_px as usize);
    let max = manifest.max_value();
    for c in channels {
        if c.grid.width != w || c.grid.height != h {
            return Err(SlideError::DimensionMismatch {
                file: c.name.clone(),
                found_w: c.grid.width as u64,
                found_h: c.grid.height as u64,
                expected_w: w as u64,
                expected_h: h as u64,
            });
        }
        if let Some(&v) = c.grid.data.iter().find(|&&v| v as u32 > max) {
            return Err(SlideError::ValueOutOfRange {
                channel: c.name.clone(),
                value: v as u32,
                bit_depth: manifest.bit_depth,
            });
        }
        write_png_gray(&dir.join(&manifest.channel_files[&c.name]), &c.grid, manifest.bit_depth)?;
    }
    if let Some(map) = instance_map {
        if map.width() != w || map.height() != h {
            return Err(SlideError::DimensionMismatch {
                file: "instance map".into(),
                found_w: map.width() as u64,
                found_h: map.height() as u64,
                expected_w: w as u64,
                expected_h: h as u64,
            });
        }
        map.write_raw(&dir.join("instances.u32"))?;
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    SlideBundle::open(dir)
}

fn sanitize_file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
