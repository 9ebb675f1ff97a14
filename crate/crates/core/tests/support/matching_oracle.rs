//! All-pairs IoU matching computed pixel set by pixel set, and a generator
//! of small overlapping instance maps.

#![allow(dead_code)]

use std::collections::BTreeSet;

use cytogate_core::raster::Grid;
use rand::Rng;

fn ids(g: &Grid<u32>) -> BTreeSet<u32> {
    g.data.iter().copied().filter(|&v| v != 0).collect()
}

/// Every `(pred, truth)` with IoU strictly above one half, sorted.
pub fn brute_force_pairs(pred: &Grid<u32>, truth: &Grid<u32>) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for p in ids(pred) {
        for t in ids(truth) {
            let mut inter = 0usize;
            let mut union = 0usize;
            for (&a, &b) in pred.data.iter().zip(&truth.data) {
                let (ip, it) = (a == p, b == t);
                inter += (ip && it) as usize;
                union += (ip || it) as usize;
            }
            if union > 0 && inter as f64 / union as f64 > 0.5 {
                out.push((p, t));
            }
        }
    }
    out
}

fn paint(g: &mut Grid<u32>, rng: &mut impl Rng, id: u32, x: i64, y: i64, w: i64, h: i64) {
    for yy in y.max(0)..(y + h).min(g.height as i64) {
        for xx in x.max(0)..(x + w).min(g.width as i64) {
            g.set(xx as usize, yy as usize, id);
        }
    }
    // ragged edge
    if rng.random_bool(0.5) {
        let (cx, cy) = (x.clamp(0, g.width as i64 - 1), y.clamp(0, g.height as i64 - 1));
        g.set(cx as usize, cy as usize, 0);
    }
}

/// A truth map of overlapping rectangles and a prediction made by jittering,
/// resizing and relabelling them, plus some spurious blobs.
pub fn random_maps(rng: &mut impl Rng) -> (Grid<u32>, Grid<u32>) {
    let (w, h) = (rng.random_range(4..24usize), rng.random_range(4..24usize));
    let mut truth = Grid::new(w, h);
    let mut pred = Grid::new(w, h);
    let n = rng.random_range(0..10u32);
    let mut next_pred = 100;
    for id in 1..=n {
        let (x, y) = (rng.random_range(-2..w as i64), rng.random_range(-2..h as i64));
        let (bw, bh) = (rng.random_range(1..7i64), rng.random_range(1..7i64));
        paint(&mut truth, rng, id, x, y, bw, bh);
        if rng.random_bool(0.8) {
            let dx = rng.random_range(-1..=1i64);
            let dy = rng.random_range(-1..=1i64);
            let dw = rng.random_range(0..=1i64);
            paint(&mut pred, rng, next_pred, x + dx, y + dy, (bw + dw).max(1), bh);
            next_pred += rng.random_range(1..4);
        }
    }
    for _ in 0..rng.random_range(0..3) {
        let (x, y) = (rng.random_range(0..w as i64), rng.random_range(0..h as i64));
        let (bw, bh) = (rng.random_range(1..4), rng.random_range(1..4));
        paint(&mut pred, rng, next_pred, x, y, bw, bh);
        next_pred += 1;
    }
    (pred, truth)
}
