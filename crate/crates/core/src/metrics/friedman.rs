use serde::{Deserialize, Serialize};

use super::gamma::chi_square_sf;
use super::MetricsError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub blocks: usize,
    pub treatments: usize,
    pub rank_sums: Vec<f64>,
    /// Set when the chi-square approximation is rough (fewer than 10 blocks or 4 treatments).
    pub small_sample: bool,
}

/// Ranks with ties sharing their mean rank, starting at 1.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Friedman test over `blocks × treatments` values, tie-corrected.
pub fn friedman_test(values: &[Vec<f64>]) -> Result<FriedmanResult, MetricsError> {
    let n = values.len();
    let k = values.first().map_or(0, Vec::len);
    if n < 2 || k < 2 {
        return Err(MetricsError::InvalidMatrix(format!(
            "need at least 2 blocks and 2 treatments, got {n}x{k}"
        )));
    }
    for (i, row) in values.iter().enumerate() {
        if row.len() != k {
            return Err(MetricsError::InvalidMatrix(format!("block {i} has {} cells, expected {k}", row.len())));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(MetricsError::InvalidMatrix(format!("missing or non-finite cell at block {i}, treatment {j}")));
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let mut rank_sums = vec![0.0; k];
    let mut tie_sum = 0.0;
    for row in values {
        let ranks = mid_ranks(row);
        for (s, r) in rank_sums.iter_mut().zip(&ranks) {
            *s += r;
        }
        let mut sorted = row.clone();
        sorted.sort_by(f64::total_cmp);
        for group in sorted.chunk_by(|a, b| a == b) {
            let t = group.len() as f64;
            tie_sum += t * t * t - t;
        }
    }
    let ssum: f64 = rank_sums.iter().map(|r| r * r).sum();
    let raw = 12.0 / (nf * kf * (kf + 1.0)) * ssum - 3.0 * nf * (kf + 1.0);
    let correction = 1.0 - tie_sum / (nf * kf * (kf * kf - 1.0));
    let (statistic, p_value) = if correction <= 1e-12 {
        (0.0, 1.0)
    } else {
        let q = (raw / correction).max(0.0);
        (q, chi_square_sf(q, kf - 1.0))
    };
    Ok(FriedmanResult {
        statistic,
        df: k - 1,
        p_value,
        blocks: n,
        treatments: k,
        rank_sums,
        small_sample: n < 10 || k < 4,
    })
}
