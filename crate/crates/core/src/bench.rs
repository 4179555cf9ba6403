//! Multi-run benchmarks and their aggregation into error-scaling curves.
//!
//! Frequencies are drawn per run index from the master seed, so every
//! strategy in a benchmark sees the same sequence of true frequencies.
//! Errors are pooled into log-spaced CET bins; inside a bin each run
//! contributes its RMS normalized error and the bin value is the geometric
//! mean over runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{CostKind, CostModel};
use crate::error::{Error, Result};
use crate::likelihood::LikelihoodModel;
use crate::sim::{run_estimation, run_stream, RunConfig, RunTrace, TrueSystem};
use crate::smc::{ResampleConfig, Support};
use crate::strategy::StrategyConfig;

/// Errors below this are clamped before taking logs.
pub const ERROR_FLOOR: f64 = 1e-12;

/// A strategy failing more than this fraction of runs fails the benchmark.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorNormalization {
    /// `|ω̂ − ω| / ω`
    #[default]
    Relative,
    /// `|ω̂ − ω| / (π/2)`
    DomainWidth,
    /// `|ω̂ − ω|`
    Absolute,
}

pub fn normalized_error(estimate: f64, omega_true: f64, normalization: ErrorNormalization) -> f64 {
    let abs = (estimate - omega_true).abs();
    match normalization {
        ErrorNormalization::Relative => abs / omega_true,
        ErrorNormalization::DomainWidth => abs / Support::default().width(),
        ErrorNormalization::Absolute => abs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub n_runs: usize,
    pub strategies: Vec<StrategyConfig>,
    pub model: LikelihoodModel,
    pub cet_budget: f64,
    pub max_experiments: u64,
    pub particles: usize,
    pub resample: ResampleConfig,
    pub bins: usize,
    pub fit_window: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub normalization: ErrorNormalization,
}

impl BenchmarkConfig {
    pub fn new(strategies: Vec<StrategyConfig>, model: LikelihoodModel, master_seed: u64) -> Self {
        Self {
            n_runs: 100,
            strategies,
            model,
            cet_budget: 1e4,
            max_experiments: 1_000_000,
            particles: 2000,
            resample: ResampleConfig::default(),
            bins: 30,
            fit_window: 0.8,
            master_seed,
            normalization: ErrorNormalization::Relative,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_runs < 2 {
            return Err(Error::Config(format!("a benchmark needs at least 2 runs, got {}", self.n_runs)));
        }
        if self.bins < 5 {
            return Err(Error::Config(format!("a benchmark needs at least 5 bins, got {}", self.bins)));
        }
        if !(self.fit_window > 0.0 && self.fit_window <= 1.0) {
            return Err(Error::Config(format!("fit window must lie in (0, 1], got {}", self.fit_window)));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("no strategies selected".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.strategies {
            if !seen.insert(s.kind) {
                return Err(Error::Config(format!("strategy '{}' listed twice", s.kind)));
            }
        }
        for s in &self.strategies {
            self.run_config(s, 0).validate()?;
        }
        Ok(())
    }

    fn run_config(&self, strategy: &StrategyConfig, seed: u64) -> RunConfig {
        RunConfig {
            strategy: strategy.clone(),
            particles: self.particles,
            resample: self.resample,
            cet_budget: self.cet_budget,
            max_experiments: self.max_experiments,
            seed,
        }
    }
}

/// True frequency and run seed for one run index.
pub fn run_assignment(master_seed: u64, run_index: usize) -> (f64, u64) {
    let mut rng = run_stream(master_seed, run_index as u64);
    let omega = Support::default().sample(&mut rng);
    (omega, rng.random())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRuns {
    pub strategy: StrategyConfig,
    /// One trace per run index, degenerate ones included.
    pub traces: Vec<RunTrace>,
}

impl StrategyRuns {
    pub fn name(&self) -> &'static str {
        self.strategy.kind.name()
    }

    pub fn completed(&self) -> impl Iterator<Item = &RunTrace> {
        self.traces.iter().filter(|t| !t.is_degenerate())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub omegas: Vec<f64>,
    pub strategies: Vec<StrategyRuns>,
}

impl BenchmarkResult {
    pub fn get(&self, name: &str) -> Option<&StrategyRuns> {
        self.strategies.iter().find(|s| s.name() == name)
    }
}

/// Executes `n_runs` runs for every strategy on the shared frequency sequence.
///
/// Runs execute on the current rayon pool; results are ordered by strategy
/// then run index regardless of completion order.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkResult> {
    cfg.validate()?;
    let assignments: Vec<(f64, u64)> = (0..cfg.n_runs).map(|i| run_assignment(cfg.master_seed, i)).collect();
    let jobs: Vec<(usize, usize)> =
        (0..cfg.strategies.len()).flat_map(|s| (0..cfg.n_runs).map(move |r| (s, r))).collect();

    let traces: Vec<RunTrace> = jobs
        .par_iter()
        .map(|&(s, r)| {
            let (omega, seed) = assignments[r];
            let system = TrueSystem::new(omega, cfg.model)?;
            run_estimation(&system, &cfg.run_config(&cfg.strategies[s], seed))
        })
        .collect::<Result<_>>()?;

    let mut traces = traces.into_iter();
    let strategies = cfg
        .strategies
        .iter()
        .map(|s| StrategyRuns { strategy: s.clone(), traces: traces.by_ref().take(cfg.n_runs).collect() })
        .collect();
    Ok(BenchmarkResult { omegas: assignments.into_iter().map(|(w, _)| w).collect(), strategies })
}

/// Logarithmically uniform partition of `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogBins {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl LogBins {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) || count == 0 {
            return Err(Error::Config(format!("invalid log bins [{lo}, {hi}] x {count}")));
        }
        Ok(Self { lo, hi, count })
    }

    /// Bins spanning the CET range of every step in `traces`.
    pub fn spanning<'a, I: IntoIterator<Item = &'a RunTrace>>(traces: I, count: usize) -> Result<Self> {
        let (lo, hi) = traces
            .into_iter()
            .flat_map(|t| t.steps.iter().map(|s| s.cet))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c), hi.max(c)));
        if !lo.is_finite() {
            return Err(Error::Config("no trace points to bin".into()));
        }
        Self::new(lo, hi, count)
    }

    fn log_span(&self) -> f64 {
        (self.hi / self.lo).ln()
    }

    pub fn index(&self, cet: f64) -> Option<usize> {
        if !(cet >= self.lo && cet <= self.hi) {
            return None;
        }
        let span = self.log_span();
        if span == 0.0 {
            return Some(0);
        }
        let i = (self.count as f64 * (cet / self.lo).ln() / span).floor() as usize;
        Some(i.min(self.count - 1))
    }

    pub fn edges(&self, i: usize) -> (f64, f64) {
        let step = self.log_span() / self.count as f64;
        (self.lo * (step * i as f64).exp(), self.lo * (step * (i + 1) as f64).exp())
    }

    /// Geometric midpoint of bin `i`.
    pub fn center(&self, i: usize) -> f64 {
        let (a, b) = self.edges(i);
        (a * b).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub cet_center: f64,
    pub rmse: f64,
    #[serde(skip)]
    pub bin: usize,
    /// Runs contributing to the bin.
    #[serde(skip)]
    pub runs: usize,
}

/// Error versus CET, strictly increasing in CET.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub points: Vec<CurvePoint>,
}

impl ScalingCurve {
    pub fn from_pairs<I: IntoIterator<Item = (f64, f64)>>(pairs: I) -> Self {
        let points = pairs
            .into_iter()
            .enumerate()
            .map(|(bin, (cet_center, rmse))| CurvePoint { cet_center, rmse, bin, runs: 1 })
            .collect();
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn at_bin(&self, bin: usize) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.bin == bin)
    }

    /// Log-log linear interpolation; `None` outside the curve's range.
    pub fn interpolate(&self, cet: f64) -> Option<f64> {
        let pts = &self.points;
        let i = pts.iter().position(|p| p.cet_center >= cet)?;
        if pts[i].cet_center == cet {
            return Some(pts[i].rmse);
        }
        if i == 0 {
            return None;
        }
        let (a, b) = (&pts[i - 1], &pts[i]);
        let f = (cet / a.cet_center).ln() / (b.cet_center / a.cet_center).ln();
        Some((a.rmse.ln() + f * (b.rmse / a.rmse).ln()).exp())
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["cet_center", "rmse"])?;
        for p in &self.points {
            w.write_record([p.cet_center.to_string(), p.rmse.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Bins the traces over their own CET span.
pub fn bin_log_average_exp(
    traces: &[RunTrace],
    bins: usize,
    normalization: ErrorNormalization,
) -> Result<ScalingCurve> {
    if traces.iter().any(|t| t.steps.is_empty()) {
        return Err(Error::Config("cannot bin an empty trace".into()));
    }
    let grid = LogBins::spanning(traces, bins)?;
    Ok(bin_traces(traces.iter(), &grid, normalization))
}

/// Bins traces over a given grid; bins without data are omitted.
pub fn bin_traces<'a, I>(traces: I, grid: &LogBins, normalization: ErrorNormalization) -> ScalingCurve
where
    I: IntoIterator<Item = &'a RunTrace>,
{
    // Per bin: sum of log(per-run RMS) and number of runs.
    let mut log_sums = vec![0.0; grid.count];
    let mut run_counts = vec![0usize; grid.count];
    let mut clamped = 0usize;

    let mut sq = vec![0.0; grid.count];
    let mut n = vec![0usize; grid.count];
    for trace in traces {
        sq.iter_mut().for_each(|v| *v = 0.0);
        n.iter_mut().for_each(|v| *v = 0);
        for s in &trace.steps {
            if let Some(i) = grid.index(s.cet) {
                let e = normalized_error(s.estimate, trace.omega_true, normalization);
                sq[i] += e * e;
                n[i] += 1;
            }
        }
        for i in 0..grid.count {
            if n[i] > 0 {
                let mut rms = (sq[i] / n[i] as f64).sqrt();
                if !(rms >= ERROR_FLOOR) {
                    rms = ERROR_FLOOR;
                    clamped += 1;
                }
                log_sums[i] += rms.ln();
                run_counts[i] += 1;
            }
        }
    }
    if clamped > 0 {
        log::debug!("{clamped} bin errors clamped to {ERROR_FLOOR:e}");
    }

    let points = (0..grid.count)
        .filter(|&i| run_counts[i] > 0)
        .map(|i| CurvePoint {
            cet_center: grid.center(i),
            rmse: (log_sums[i] / run_counts[i] as f64).exp(),
            bin: i,
            runs: run_counts[i],
        })
        .collect();
    ScalingCurve { points }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub exponent: f64,
    pub multiplier: f64,
    /// RMS residual in log10 space.
    pub residual: f64,
    pub points_used: usize,
}

/// Least-squares line through `(log10 cet, log10 rmse)` over the last
/// `window` fraction of the curve.
pub fn fit_loglog(curve: &ScalingCurve, window: f64) -> Result<FitResult> {
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::Fit(format!("fit window must lie in (0, 1], got {window}")));
    }
    let n_total = curve.len();
    let n = ((window * n_total as f64).ceil() as usize).min(n_total);
    if n < 3 {
        return Err(Error::Fit(format!("need at least 3 points to fit, have {n}")));
    }
    let pts: Vec<(f64, f64)> = curve.points[n_total - n..]
        .iter()
        .map(|p| (p.cet_center.log10(), p.rmse.log10()))
        .collect();
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all fit points share one CET".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / nf).sqrt();
    Ok(FitResult { exponent: slope, multiplier: 10f64.powf(intercept), residual, points_used: n })
}

/// Mean final experiment count of the completed runs of each strategy.
pub fn experiment_count_table(result: &BenchmarkResult) -> BTreeMap<String, f64> {
    result
        .strategies
        .iter()
        .map(|s| (s.name().to_string(), mean_experiments(s.completed())))
        .collect()
}

pub fn mean_experiments<'a, I: IntoIterator<Item = &'a RunTrace>>(traces: I) -> f64 {
    let (sum, count) = traces
        .into_iter()
        .fold((0u64, 0usize), |(s, c), t| (s + t.n_experiments(), c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum as f64 / count as f64
    }
}

/// Decades spanned by reference lines anchored on a single-point curve.
pub const REFERENCE_SPAN_DECADES: i32 = 3;

/// Slope −1/2 (standard quantum limit) and slope −1 (Heisenberg limit)
/// lines through the curve's first point.
pub fn reference_lines(curve: &ScalingCurve) -> Result<(ScalingCurve, ScalingCurve)> {
    let anchor = curve.points.first().ok_or_else(|| Error::Config("empty curve".into()))?;
    let cets: Vec<f64> = if curve.len() >= 2 {
        curve.points.iter().map(|p| p.cet_center).collect()
    } else {
        (0..=REFERENCE_SPAN_DECADES).map(|d| anchor.cet_center * 10f64.powi(d)).collect()
    };
    let line = |slope: f64| {
        ScalingCurve::from_pairs(
            cets.iter().map(|&c| (c, anchor.rmse * (c / anchor.cet_center).powf(slope))),
        )
    };
    Ok((line(-0.5), line(-1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run_index: usize,
    pub diagnostic: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub name: String,
    pub curve: ScalingCurve,
    pub fit: Option<FitResult>,
    pub fit_error: Option<String>,
    pub mean_n_experiments: f64,
    pub failures: Vec<RunFailure>,
    /// More than [`MAX_FAILURE_FRACTION`] of runs degenerated.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkAnalysis {
    /// Shared CET grid across strategies.
    pub bins: LogBins,
    pub strategies: Vec<StrategySummary>,
}

impl BenchmarkAnalysis {
    pub fn get(&self, name: &str) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.name == name)
    }

    /// Largest bin index populated for every named strategy.
    pub fn final_common_bin(&self, names: &[&str]) -> Option<usize> {
        (0..self.bins.count)
            .rev()
            .find(|&b| names.iter().all(|n| self.get(n).is_some_and(|s| s.curve.at_bin(b).is_some())))
    }

    pub fn any_failed(&self) -> bool {
        self.strategies.iter().any(|s| s.failed)
    }
}

/// Curves on a common grid, fits, counts and failure report.
pub fn analyze(result: &BenchmarkResult, cfg: &BenchmarkConfig) -> Result<BenchmarkAnalysis> {
    let grid = LogBins::spanning(result.strategies.iter().flat_map(|s| s.completed()), cfg.bins)?;
    let strategies = result
        .strategies
        .iter()
        .map(|s| {
            let curve = bin_traces(s.completed(), &grid, cfg.normalization);
            let (fit, fit_error) = match fit_loglog(&curve, cfg.fit_window) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let failures: Vec<RunFailure> = s
                .traces
                .iter()
                .enumerate()
                .filter(|(_, t)| t.is_degenerate())
                .map(|(i, t)| RunFailure { run_index: i, diagnostic: t.diagnostic.clone().unwrap_or_default() })
                .collect();
            let failed = failures.len() as f64 > MAX_FAILURE_FRACTION * s.traces.len() as f64;
            if failed {
                log::warn!("strategy {} degenerated in {} of {} runs", s.name(), failures.len(), s.traces.len());
            }
            StrategySummary {
                name: s.name().to_string(),
                curve,
                fit,
                fit_error,
                mean_n_experiments: mean_experiments(s.completed()),
                failures,
                failed,
            }
        })
        .collect();
    Ok(BenchmarkAnalysis { bins: grid, strategies })
}

#[derive(Serialize)]
struct FitEntry {
    exponent: Option<f64>,
    multiplier: Option<f64>,
    residual: Option<f64>,
    mean_n_experiments: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct CostEntry {
    n: u64,
    predicted_cost: Option<String>,
}

#[derive(Serialize)]
struct Report<'a, C: Serialize> {
    config: &'a C,
    omegas: &'a [f64],
    bins: LogBins,
    failures: BTreeMap<&'a str, &'a [RunFailure]>,
    failed_strategies: Vec<&'a str>,
}

/// Writes `traces/`, `curves/`, `fits.json`, `costs.json` and `report.json`
/// under `dir`. `echo` is the effective configuration recorded in the report.
pub fn write_outputs<C: Serialize>(
    dir: &Path,
    cfg: &BenchmarkConfig,
    result: &BenchmarkResult,
    analysis: &BenchmarkAnalysis,
    echo: &C,
) -> Result<()> {
    for sub in ["traces", "curves"] {
        let p = dir.join(sub);
        if p.exists() {
            fs::remove_dir_all(&p)?;
        }
    }
    for s in &result.strategies {
        let tdir = dir.join("traces").join(s.name());
        for (i, trace) in s.traces.iter().enumerate() {
            let (_, seed) = run_assignment(cfg.master_seed, i);
            trace.write_files(&tdir, &i.to_string(), &cfg.run_config(&s.strategy, seed), &cfg.model)?;
        }
    }
    let cdir = dir.join("curves");
    fs::create_dir_all(&cdir)?;
    let mut fits = BTreeMap::new();
    let mut costs = BTreeMap::new();
    for s in &analysis.strategies {
        s.curve.write_csv(fs::File::create(cdir.join(format!("{}.csv", s.name)))?)?;
        fits.insert(
            s.name.as_str(),
            FitEntry {
                exponent: s.fit.map(|f| f.exponent),
                multiplier: s.fit.map(|f| f.multiplier),
                residual: s.fit.map(|f| f.residual),
                mean_n_experiments: s.mean_n_experiments,
                error: s.fit_error.clone(),
            },
        );
    }
    for (s, summary) in result.strategies.iter().zip(&analysis.strategies) {
        let n = if summary.mean_n_experiments.is_finite() {
            (summary.mean_n_experiments.round() as u64).max(1)
        } else {
            1
        };
        let predicted = CostModel::new(cfg.particles as u64, s.strategy.candidates_per_iter as u64, n)
            .and_then(|m| m.predicted_cost(CostKind::from(s.strategy.kind)))
            .map(|c| c.to_string())
            .ok();
        costs.insert(s.name(), CostEntry { n, predicted_cost: predicted });
    }
    fs::write(dir.join("fits.json"), serde_json::to_string_pretty(&fits)?)?;
    fs::write(
        dir.join("costs.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "K": cfg.particles,
            "strategies": costs,
        }))?,
    )?;
    let report = Report {
        config: echo,
        omegas: &result.omegas,
        bins: analysis.bins,
        failures: analysis.strategies.iter().map(|s| (s.name.as_str(), s.failures.as_slice())).collect(),
        failed_strategies: analysis.strategies.iter().filter(|s| s.failed).map(|s| s.name.as_str()).collect(),
    };
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(())
}
