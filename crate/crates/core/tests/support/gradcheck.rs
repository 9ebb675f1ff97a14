//! Central-difference gradient check for the softmax model.

#![allow(dead_code)]

use cytogate_core::classifier::Params;
use rand::Rng;

/// `‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖)` on one random problem.
pub fn gradient_relative_error(rng: &mut impl Rng) -> f64 {
    let k = rng.random_range(2..7usize);
    let d = rng.random_range(1..12usize);
    let n = rng.random_range(1..9usize);
    let mut p = Params::zeros(k, d);
    p.w.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    p.b.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    let xs: Vec<Vec<f32>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f32>()).collect()).collect();
    let ys: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let refs: Vec<&[f32]> = xs.iter().map(|x| x.as_slice()).collect();

    let (_, g) = p.loss_and_gradient(&refs, &ys);
    let analytic: Vec<f64> = g.w.iter().chain(&g.b).copied().collect();
    let h = 1e-5;
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..analytic.len() {
        let eval = |delta: f64| {
            let mut q = p.clone();
            if i < q.w.len() {
                q.w[i] += delta;
            } else {
                q.b[i - q.w.len()] += delta;
            }
            q.loss_and_gradient(&refs, &ys).0
        };
        numeric.push((eval(h) - eval(-h)) / (2.0 * h));
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    if na + nn == 0.0 {
        0.0
    } else {
        diff / (na + nn)
    }
}
