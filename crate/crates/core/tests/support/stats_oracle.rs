//! Whole-image per-instance statistics, computed pixel by pixel in f64.

#![allow(dead_code)]

use std::collections::BTreeMap;

use cytogate_core::raster::Grid;

pub struct NaiveStats {
    pub area: u64,
    pub cx: f64,
    pub cy: f64,
    pub means: Vec<f64>,
}

pub fn naive_stats(ids: &Grid<u32>, channels: &[Grid<u16>]) -> BTreeMap<u32, NaiveStats> {
    let mut acc: BTreeMap<u32, (u64, f64, f64, Vec<f64>)> = BTreeMap::new();
    for y in 0..ids.height {
        for x in 0..ids.width {
            let id = ids.get(x, y);
            if id == 0 {
                continue;
            }
            let e = acc.entry(id).or_insert_with(|| (0, 0.0, 0.0, vec![0.0; channels.len()]));
            e.0 += 1;
            e.1 += x as f64;
            e.2 += y as f64;
            for (s, c) in e.3.iter_mut().zip(channels) {
                *s += c.get(x, y) as f64;
            }
        }
    }
    acc.into_iter()
        .map(|(id, (n, sx, sy, sums))| {
            let nf = n as f64;
            (
                id,
                NaiveStats {
                    area: n,
                    cx: sx / nf,
                    cy: sy / nf,
                    means: sums.into_iter().map(|s| s / nf).collect(),
                },
            )
        })
        .collect()
}
