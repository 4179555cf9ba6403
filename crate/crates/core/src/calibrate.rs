//! Grid search for the proportionality constant of the σ and
//! particle-guess heuristics.

use serde::{Deserialize, Serialize};

use crate::bench::{normalized_error, run_assignment, ErrorNormalization};
use crate::error::{Error, Result};
use crate::likelihood::LikelihoodModel;
use crate::sim::{run_estimation, RunConfig, TrueSystem};
use crate::smc::{ResampleConfig, Support};
use crate::strategy::{StrategyConfig, StrategyKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub kind: StrategyKind,
    pub model: LikelihoodModel,
    pub runs: usize,
    pub grid: Vec<f64>,
    /// Usually well below the benchmark budget.
    pub cet_budget: f64,
    pub max_experiments: u64,
    pub particles: usize,
    pub resample: ResampleConfig,
    pub seed: u64,
    #[serde(default)]
    pub normalization: ErrorNormalization,
}

impl CalibrationConfig {
    pub fn new(kind: StrategyKind, model: LikelihoodModel, grid: Vec<f64>, seed: u64) -> Self {
        Self {
            kind,
            model,
            runs: 20,
            grid,
            cet_budget: 1e3,
            max_experiments: 1_000_000,
            particles: 1000,
            resample: ResampleConfig::default(),
            seed,
            normalization: ErrorNormalization::Relative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub multiplier: f64,
    /// RMS of the final normalized errors.
    pub rmse: f64,
    pub degenerate_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub kind: StrategyKind,
    pub selected: f64,
    pub scores: Vec<GridScore>,
}

/// Runs every grid value on the same frequencies and seeds and returns the
/// one with the lowest final normalized RMSE (first one on ties).
///
/// A run that degenerates is scored by its last estimate, or by the prior
/// mean if it never produced one.
pub fn calibrate_multiplier(cfg: &CalibrationConfig) -> Result<CalibrationResult> {
    if !matches!(cfg.kind, StrategyKind::Sh | StrategyKind::Pgh) {
        return Err(Error::Config(format!("calibration applies to sh and pgh, not {}", cfg.kind)));
    }
    if cfg.grid.is_empty() {
        return Err(Error::Config("calibration grid is empty".into()));
    }
    if cfg.runs == 0 {
        return Err(Error::Config("calibration needs at least one run".into()));
    }
    let prior_mean = {
        let s = Support::default();
        0.5 * (s.lower + s.upper)
    };

    let mut scores = Vec::with_capacity(cfg.grid.len());
    for &c in &cfg.grid {
        let strategy = StrategyConfig { heuristic_multiplier: c, ..StrategyConfig::for_kind(cfg.kind) };
        let mut sq = 0.0;
        let mut degenerate_runs = 0;
        for i in 0..cfg.runs {
            let (omega, seed) = run_assignment(cfg.seed, i);
            let run = RunConfig {
                strategy: strategy.clone(),
                particles: cfg.particles,
                resample: cfg.resample,
                cet_budget: cfg.cet_budget,
                max_experiments: cfg.max_experiments,
                seed,
            };
            let trace = run_estimation(&TrueSystem::new(omega, cfg.model)?, &run)?;
            if trace.is_degenerate() {
                degenerate_runs += 1;
            }
            let estimate = trace.final_step().map_or(prior_mean, |s| s.estimate);
            sq += normalized_error(estimate, omega, cfg.normalization).powi(2);
        }
        scores.push(GridScore { multiplier: c, rmse: (sq / cfg.runs as f64).sqrt(), degenerate_runs });
    }

    let best = scores
        .iter()
        .copied()
        .reduce(|best, s| if s.rmse < best.rmse { s } else { best })
        .expect("non-empty grid");
    Ok(CalibrationResult { kind: cfg.kind, selected: best.multiplier, scores })
}
