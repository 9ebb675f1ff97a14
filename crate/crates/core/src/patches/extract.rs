use crate::classes::CellClass;
use crate::raster::Grid;
use crate::slide::SlideBundle;

use super::resample::resample_bicubic;
use super::{PatchError, PATCH_MPP, PATCH_SIZE};

/// One training example: `channels × 41 × 41` values in [0, 1], channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub values: Vec<f32>,
    pub channels: usize,
    pub instance_id: u32,
    pub class: CellClass,
    pub slide_id: String,
    /// Patch center in µm from the slide origin.
    pub center_um: (f64, f64),
}

/// Min-max normalizes in place across all channels; constant input becomes all zeros.
pub fn normalize_patch(values: &mut [f32]) {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let range = hi - lo;
    values.iter_mut().for_each(|v| *v = ((*v - lo) / range).clamp(0.0, 1.0));
}

/// Holds one slide's channels resampled to 0.5 µm/px and cuts patches from them.
pub struct PatchExtractor {
    slide_id: String,
    src_mpp: f64,
    src_w: usize,
    src_h: usize,
    channels: Vec<Grid<f32>>,
}

impl PatchExtractor {
    pub fn new(bundle: &SlideBundle, channels: &[&str]) -> Result<Self, PatchError> {
        if channels.is_empty() {
            return Err(PatchError::NoChannels);
        }
        let src_mpp = bundle.manifest().microns_per_pixel;
        let resampled = channels
            .iter()
            .map(|c| {
                let raster = bundle.read_channel(c)?;
                resample_bicubic(&raster.grid.map(|v| v as f32), src_mpp, PATCH_MPP)
            })
            .collect::<Result<Vec<_>, PatchError>>()?;
        Ok(Self {
            slide_id: bundle.manifest().slide_id.clone(),
            src_mpp,
            src_w: bundle.width() as usize,
            src_h: bundle.height() as usize,
            channels: resampled,
        })
    }

    pub fn from_grids(slide_id: &str, src_mpp: f64, grids: &[Grid<f32>]) -> Result<Self, PatchError> {
        let first = grids.first().ok_or(PatchError::NoChannels)?;
        let channels = grids
            .iter()
            .map(|g| resample_bicubic(g, src_mpp, PATCH_MPP))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            slide_id: slide_id.to_string(),
            src_mpp,
            src_w: first.width,
            src_h: first.height,
            channels,
        })
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Pixel on the resampled grid nearest to a source-resolution centroid,
    /// rounding halves up.
    pub fn resampled_center(&self, cx: f64, cy: f64) -> (isize, isize) {
        let out = &self.channels[0];
        let map = |c: f64, src: usize, dst: usize| {
            let x = (c + 0.5) * dst as f64 / src as f64 - 0.5;
            (x + 0.5).floor() as isize
        };
        (map(cx, self.src_w, out.width), map(cy, self.src_h, out.height))
    }

    /// Cuts the 41×41 patch around a centroid given in source pixels.
    pub fn extract(&self, instance_id: u32, class: CellClass, cx: f64, cy: f64) -> Result<Patch, PatchError> {
        let inside = |c: f64, n: usize| c.is_finite() && c >= 0.0 && c <= (n - 1) as f64;
        if !inside(cx, self.src_w) || !inside(cy, self.src_h) {
            return Err(PatchError::CentroidOutside { x: cx, y: cy });
        }
        let (px, py) = self.resampled_center(cx, cy);
        let half = (PATCH_SIZE / 2) as isize;
        let mut values = Vec::with_capacity(self.channels.len() * PATCH_SIZE * PATCH_SIZE);
        for grid in &self.channels {
            for dy in -half..=half {
                for dx in -half..=half {
                    values.push(grid.get_clamped(px + dx, py + dy));
                }
            }
        }
        normalize_patch(&mut values);
        Ok(Patch {
            values,
            channels: self.channels.len(),
            instance_id,
            class,
            slide_id: self.slide_id.clone(),
            center_um: (cx * self.src_mpp, cy * self.src_mpp),
        })
    }
}
