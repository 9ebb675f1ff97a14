//! Randomized check that parent-level bounds contain the true subclass PPV
//! and NPV.

#![allow(dead_code)]

use std::collections::BTreeMap;

use cytogate_core::metrics::{bounded_metrics, ParentMap};
use cytogate_core::CellClass;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

/// Builds a random fully-labelled evaluation, coarsens truth to parents and
/// returns the number of bound violations found (0 expected).
pub fn sandwich_trial(rng: &mut impl Rng) -> usize {
    let mut classes = CellClass::ALL.to_vec();
    classes.shuffle(rng);
    let mapped = rng.random_range(1..=8);
    let parents = ["P", "Q", "R"];
    let n_parents = rng.random_range(1..=3);
    let pm = ParentMap(
        classes[..mapped]
            .iter()
            .map(|&c| (c, parents[rng.random_range(0..n_parents)].to_string()))
            .collect::<BTreeMap<_, _>>(),
    );
    // truth draws from mapped classes and a few others, which get their own parent
    let pool: Vec<CellClass> = classes[..(mapped + 3).min(14)].to_vec();
    let parent_of = |c: CellClass| pm.parent(c).map_or_else(|| format!("other:{c}"), str::to_string);
    let n = rng.random_range(1..40);
    let full: Vec<(CellClass, CellClass)> = (0..n)
        .map(|_| {
            let t = *pool.choose(rng).unwrap();
            let p = if rng.random_bool(0.5) { t } else { *pool.choose(rng).unwrap() };
            (p, t)
        })
        .collect();
    let coarse: Vec<(CellClass, String)> = full.iter().map(|&(p, t)| (p, parent_of(t))).collect();
    let b = bounded_metrics(&coarse, &pm);

    let mut violations = 0;
    for r in &b.per_class {
        let c = r.class;
        let pos: Vec<_> = full.iter().filter(|(p, _)| *p == c).collect();
        let neg: Vec<_> = full.iter().filter(|(p, _)| *p != c).collect();
        if !pos.is_empty() {
            let ppv = pos.iter().filter(|(_, t)| *t == c).count() as f64 / pos.len() as f64;
            if ppv > r.ppv_upper.unwrap() + 1e-12 {
                violations += 1;
            }
        }
        if !neg.is_empty() {
            let npv = neg.iter().filter(|(_, t)| *t != c).count() as f64 / neg.len() as f64;
            let (lo, hi) = (r.npv_lower.unwrap(), r.npv_upper.unwrap());
            if npv < lo - 1e-12 || npv > hi + 1e-12 || lo > hi {
                violations += 1;
            }
        }
    }
    violations
}
