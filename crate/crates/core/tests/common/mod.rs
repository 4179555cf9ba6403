//! Brute-force posterior on a regular grid, used as an independent oracle.

#![allow(dead_code)]

use freqest_core::{LikelihoodModel, ParticleEnsemble};

/// Midpoints of `n` equal cells over `]0, π/2]`.
pub fn grid(n: usize) -> Vec<f64> {
    let h = std::f64::consts::FRAC_PI_2 / n as f64;
    (0..n).map(|i| (i as f64 + 0.5) * h).collect()
}

/// Binomial likelihood written out directly from cos²/sin², independent of
/// the library's record evaluation.
pub fn log_lik(model: &LikelihoodModel, omega: f64, records: &[(f64, u32, u32)]) -> f64 {
    records
        .iter()
        .map(|&(t, shots, ones)| {
            let d = model.coherence_time().map_or(1.0, |tc| (-t / tc).exp());
            let p0 = 0.5 * (1.0 + d * (omega * t).cos());
            let p1 = 0.5 * (1.0 - d * (omega * t).cos());
            f64::from(shots - ones) * p0.ln() + f64::from(ones) * p1.ln()
        })
        .sum()
}

/// Normalized posterior weights on `points`.
pub fn posterior(model: &LikelihoodModel, points: &[f64], records: &[(f64, u32, u32)]) -> Vec<f64> {
    let lls: Vec<f64> = points.iter().map(|&w| log_lik(model, w, records)).collect();
    let max = lls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let un: Vec<f64> = lls.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = un.iter().sum();
    un.into_iter().map(|u| u / z).collect()
}

pub fn mean_std(points: &[f64], weights: &[f64]) -> (f64, f64) {
    let mean: f64 = points.iter().zip(weights).map(|(x, w)| x * w).sum();
    let var: f64 = points.iter().zip(weights).map(|(x, w)| w * (x - mean).powi(2)).sum();
    (mean, var.sqrt())
}

/// Posterior mean and std on an `n`-point grid.
pub fn oracle(model: &LikelihoodModel, records: &[(f64, u32, u32)], n: usize) -> (f64, f64) {
    let g = grid(n);
    let w = posterior(model, &g, records);
    mean_std(&g, &w)
}

/// Ensemble on an `n`-point grid carrying the exact posterior weights.
pub fn grid_ensemble(model: &LikelihoodModel, records: &[(f64, u32, u32)], n: usize) -> ParticleEnsemble {
    let g = grid(n);
    let w = posterior(model, &g, records);
    ParticleEnsemble::new(g, w).unwrap()
}
