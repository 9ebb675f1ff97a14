//! Separable bicubic resampling between physical resolutions.

use crate::raster::Grid;

use super::PatchError;

/// Keys cubic convolution parameter.
pub const CUBIC_A: f64 = -0.5;

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    let a = CUBIC_A;
    if x < 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * a
    } else {
        0.0
    }
}

/// Output extent for a physical resampling, `round(extent * src / dst)`.
pub fn resampled_extent(extent: usize, src_mpp: f64, dst_mpp: f64) -> usize {
    (extent as f64 * src_mpp / dst_mpp).round() as usize
}

/// For one axis: first source index and normalized weights per output sample.
/// When shrinking, the kernel is stretched by the scale factor so every source
/// pixel contributes.
fn axis_weights(in_len: usize, out_len: usize) -> Vec<(isize, Vec<f64>)> {
    let scale = in_len as f64 / out_len as f64;
    let stretch = scale.max(1.0);
    let radius = 2.0 * stretch;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale - 0.5;
            let first = (center - radius).floor() as isize + 1;
            let last = (center + radius).ceil() as isize - 1;
            let mut w: Vec<f64> = (first..=last).map(|j| cubic((j as f64 - center) / stretch)).collect();
            let sum: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= sum);
            (first, w)
        })
        .collect()
}

pub(crate) fn resample_unclamped(src: &Grid<f32>, out_w: usize, out_h: usize) -> Grid<f64> {
    let wx = axis_weights(src.width, out_w);
    let wy = axis_weights(src.height, out_h);
    let last_x = src.width as isize - 1;
    let last_y = src.height as isize - 1;

    // horizontal pass: src.height x out_w
    let mut tmp = vec![0f64; src.height * out_w];
    for y in 0..src.height {
        let row = src.row(y);
        for (ox, (first, w)) in wx.iter().enumerate() {
            let mut acc = 0.0;
            for (k, &wk) in w.iter().enumerate() {
                let sx = (first + k as isize).clamp(0, last_x) as usize;
                acc += wk * row[sx] as f64;
            }
            tmp[y * out_w + ox] = acc;
        }
    }
    let mut out = vec![0f64; out_w * out_h];
    for (oy, (first, w)) in wy.iter().enumerate() {
        for (k, &wk) in w.iter().enumerate() {
            let sy = (first + k as isize).clamp(0, last_y) as usize;
            let src_row = &tmp[sy * out_w..(sy + 1) * out_w];
            let dst_row = &mut out[oy * out_w..(oy + 1) * out_w];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += wk * s;
            }
        }
    }
    Grid::from_vec(out_w, out_h, out)
}

/// Resamples a raster from `src_mpp` to `dst_mpp` µm/px with a Catmull-Rom
/// kernel, clamping results to the input's value range.
pub fn resample_bicubic(src: &Grid<f32>, src_mpp: f64, dst_mpp: f64) -> Result<Grid<f32>, PatchError> {
    if !(src_mpp.is_finite() && src_mpp > 0.0 && dst_mpp.is_finite() && dst_mpp > 0.0) {
        return Err(PatchError::InvalidResolution { src_mpp, dst_mpp });
    }
    let out_w = resampled_extent(src.width, src_mpp, dst_mpp);
    let out_h = resampled_extent(src.height, src_mpp, dst_mpp);
    if out_w == 0 || out_h == 0 || src.is_empty() {
        return Err(PatchError::DegenerateOutput {
            width: out_w,
            height: out_h,
        });
    }
    let (lo, hi) = src
        .data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let out = resample_unclamped(src, out_w, out_h);
    Ok(out.map(|v| (v as f32).clamp(lo, hi)))
}
