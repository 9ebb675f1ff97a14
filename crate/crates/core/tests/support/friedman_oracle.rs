//! Friedman statistic in the rank-variance form, which handles ties without
//! a separate correction term, with p from a reference chi-square.

#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

fn rank_of(row: &[f64], v: f64) -> f64 {
    let less = row.iter().filter(|&&x| x < v).count() as f64;
    let equal = row.iter().filter(|&&x| x == v).count() as f64;
    less + (equal + 1.0) / 2.0
}

/// `(Q, p)`.
pub fn friedman_reference(values: &[Vec<f64>]) -> (f64, f64) {
    let n = values.len() as f64;
    let k = values[0].len();
    let kf = k as f64;
    let ranks: Vec<Vec<f64>> = values
        .iter()
        .map(|row| row.iter().map(|&v| rank_of(row, v)).collect())
        .collect();
    let a: f64 = ranks.iter().flatten().map(|r| r * r).sum();
    let c = n * kf * (kf + 1.0).powi(2) / 4.0;
    if (a - c).abs() < 1e-12 {
        return (0.0, 1.0);
    }
    let center = n * (kf + 1.0) / 2.0;
    let ss: f64 = (0..k)
        .map(|j| {
            let r: f64 = ranks.iter().map(|row| row[j]).sum();
            (r - center).powi(2)
        })
        .sum();
    let q = (kf - 1.0) * ss / (a - c);
    let p = ChiSquared::new(kf - 1.0).unwrap().sf(q);
    (q, p)
}
