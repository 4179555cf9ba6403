//! Adaptive Bayesian estimation of the precession frequency of a qubit.
//!
//! The crate simulates a two-level system whose outcome probabilities
//! oscillate at an unknown angular frequency ω, infers ω with a
//! sequential Monte Carlo particle ensemble, and chooses evolution times
//! with one of several experimental-design strategies:
//!
//! * window expansion (`wes`) and its ESS-targeting variant (`awes`),
//! * the σ heuristic (`sh`) and the particle-guess heuristic (`pgh`),
//! * random sorted times (`rts`) as a non-adaptive baseline.
//!
//! The [`bench`] module turns many runs into error-versus-CET scaling
//! curves and power-law fits; [`cost`] evaluates closed-form classical
//! processing costs.
//!
//! ```
//! use freqest_core::{run_estimation, LikelihoodModel, RunConfig, StrategyConfig, StrategyKind, TrueSystem};
//!
//! let system = TrueSystem::new(0.9, LikelihoodModel::ideal()).unwrap();
//! let mut cfg = RunConfig::new(StrategyConfig::for_kind(StrategyKind::Wes), 7);
//! cfg.particles = 300;
//! cfg.cet_budget = 500.0;
//! let trace = run_estimation(&system, &cfg).unwrap();
//! let last = trace.final_step().unwrap();
//! assert!(last.cet >= 500.0);
//! ```

pub mod bench;
pub mod calibrate;
pub mod cli;
pub mod cost;
pub mod error;
pub mod likelihood;
pub mod sim;
pub mod smc;
pub mod strategy;

pub use bench::{
    analyze, bin_log_average_exp, experiment_count_table, fit_loglog, normalized_error, reference_lines,
    run_benchmark, BenchmarkAnalysis, BenchmarkConfig, BenchmarkResult, ErrorNormalization, FitResult, LogBins,
    ScalingCurve,
};
pub use calibrate::{calibrate_multiplier, CalibrationConfig, CalibrationResult};
pub use cost::{CostKind, CostModel};
pub use error::{Error, Result};
pub use likelihood::{LikelihoodModel, Outcome};
pub use sim::{
    run_estimation, run_with_policy, simulate_measurement, ControlPolicy, RunConfig, RunTrace, TerminalStatus,
    TraceStep, TrueSystem,
};
pub use smc::{DataHistory, ExperimentRecord, ParticleEnsemble, ResampleConfig, ResampleOutcome, Support};
pub use strategy::{
    expected_ess_utility, expected_variance_utility, pgh_choose, rts_schedule, sh_choose, wes_choose,
    CandidateEvaluation, StrategyConfig, StrategyKind, WindowChoice, WindowState,
};
