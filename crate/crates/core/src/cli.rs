//! `freqest` command line: `run`, `bench`, `calibrate` and `cost`.
//!
//! Every flag has a key in the optional TOML config file (`--config`);
//! flags take precedence over the file. Exit codes: 0 success, 2 usage,
//! 3 output directory conflict, 4 degenerate run or failed benchmark,
//! 1 other runtime errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bench::{analyze, run_benchmark, write_outputs, BenchmarkConfig, ErrorNormalization};
use crate::calibrate::{calibrate_multiplier, CalibrationConfig};
use crate::cost::CostModel;
use crate::error::Error;
use crate::likelihood::LikelihoodModel;
use crate::sim::{run_estimation, RunConfig, TerminalStatus, TrueSystem};
use crate::smc::ResampleConfig;
use crate::strategy::{StrategyConfig, StrategyKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFLICT: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "freqest", version, about = "Adaptive Bayesian qubit frequency estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute one estimation run and write its trace.
    Run(RunArgs),
    /// Run a multi-strategy benchmark and write curves, fits and costs.
    Bench(BenchArgs),
    /// Select the σ/PGH multiplier from a grid.
    Calibrate(CalibrateArgs),
    /// Print the classical cost table.
    Cost(CostArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cet_budget: Option<f64>,
    #[arg(long)]
    pub max_experiments: Option<u64>,
    /// Particle count K.
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub coherence_time: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub heuristic_multiplier: Option<f64>,
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long)]
    pub hit_rank: Option<usize>,
    #[arg(long)]
    pub hits_to_expand: Option<u32>,
    #[arg(long)]
    pub warmup_shots: Option<u32>,
    #[arg(long)]
    pub warmup_time: Option<f64>,
    #[arg(long)]
    pub initial_upper: Option<f64>,
    #[arg(long)]
    pub shots: Option<u32>,
    #[arg(long)]
    pub ess_target: Option<f64>,
    #[arg(long)]
    pub rts_cap: Option<f64>,
    #[arg(long)]
    pub ess_threshold: Option<f64>,
    #[arg(long)]
    pub mh_steps: Option<u32>,
    #[arg(long)]
    pub proposal_scale: Option<f64>,
    /// relative, domain_width or absolute.
    #[arg(long)]
    pub normalization: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub strategy: Option<String>,
    /// True frequency; drawn from the seed when omitted.
    #[arg(long)]
    pub omega: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated strategy list.
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<String>>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub fit_window: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// sh or pgh.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub runs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "K")]
    pub k: Option<i64>,
    #[arg(long = "M")]
    pub m: Option<i64>,
    #[arg(long = "N")]
    pub n: Option<i64>,
}

/// Config file layout. Section and key names mirror the flags.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub general: GeneralSection,
    pub model: ModelSection,
    pub smc: SmcSection,
    pub strategy: StrategySection,
    pub run: RunSection,
    pub bench: BenchSection,
    pub calibrate: CalibrateSection,
    pub cost: CostSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralSection {
    pub seed: Option<u64>,
    pub cet_budget: Option<f64>,
    pub max_experiments: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub force: Option<bool>,
    pub normalization: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub coherence_time: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcSection {
    pub particles: Option<usize>,
    pub ess_threshold: Option<f64>,
    pub mh_steps: Option<u32>,
    pub proposal_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySection {
    pub candidates: Option<usize>,
    pub hit_rank: Option<usize>,
    pub hits_to_expand: Option<u32>,
    pub warmup_shots: Option<u32>,
    pub warmup_time: Option<f64>,
    pub initial_upper: Option<f64>,
    pub shots: Option<u32>,
    pub heuristic_multiplier: Option<f64>,
    pub ess_target: Option<f64>,
    pub rts_cap: Option<f64>,
    pub cet_weighted_variance: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub strategy: Option<String>,
    pub omega: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub strategies: Option<Vec<String>>,
    pub runs: Option<usize>,
    pub bins: Option<usize>,
    pub fit_window: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    pub kind: Option<String>,
    pub grid: Option<Vec<f64>>,
    pub runs: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    #[serde(rename = "K")]
    pub k: Option<i64>,
    #[serde(rename = "M")]
    pub m: Option<i64>,
    #[serde(rename = "N")]
    pub n: Option<i64>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Conflict(String),
    Degenerate(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Conflict(_) => EXIT_CONFLICT,
            CliError::Degenerate(_) => EXIT_DEGENERATE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Conflict(m) | CliError::Degenerate(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Domain(_) => CliError::Usage(e.to_string()),
            Error::DegeneratePosterior(_) | Error::DegenerateDistribution(_) => CliError::Degenerate(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn load_file(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

fn parse_kind(s: &str) -> CliResult<StrategyKind> {
    s.parse().map_err(|e: Error| CliError::Usage(e.to_string()))
}

fn parse_normalization(s: &str) -> CliResult<ErrorNormalization> {
    match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
        "relative" => Ok(ErrorNormalization::Relative),
        "domain_width" => Ok(ErrorNormalization::DomainWidth),
        "absolute" => Ok(ErrorNormalization::Absolute),
        other => Err(CliError::Usage(format!("unknown normalization '{other}'"))),
    }
}

/// Flags merged over the file, with library defaults underneath.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub cet_budget: Option<f64>,
    pub max_experiments: u64,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub normalization: ErrorNormalization,
    pub model: LikelihoodModel,
    pub particles: usize,
    pub resample: ResampleConfig,
    #[serde(skip)]
    strategy: StrategySection,
}

impl Settings {
    fn resolve(args: &CommonArgs, file: &FileConfig) -> CliResult<Self> {
        let g = &file.general;
        let s = &file.smc;
        let defaults = ResampleConfig::default();
        let model = LikelihoodModel::new(args.coherence_time.or(file.model.coherence_time))?;
        let normalization = match args.normalization.as_deref().or(g.normalization.as_deref()) {
            Some(n) => parse_normalization(n)?,
            None => ErrorNormalization::default(),
        };
        let fs = &file.strategy;
        let strategy = StrategySection {
            candidates: args.candidates.or(fs.candidates),
            hit_rank: args.hit_rank.or(fs.hit_rank),
            hits_to_expand: args.hits_to_expand.or(fs.hits_to_expand),
            warmup_shots: args.warmup_shots.or(fs.warmup_shots),
            warmup_time: args.warmup_time.or(fs.warmup_time),
            initial_upper: args.initial_upper.or(fs.initial_upper),
            shots: args.shots.or(fs.shots),
            heuristic_multiplier: args.heuristic_multiplier.or(fs.heuristic_multiplier),
            ess_target: args.ess_target.or(fs.ess_target),
            rts_cap: args.rts_cap.or(fs.rts_cap),
            cet_weighted_variance: fs.cet_weighted_variance,
        };
        let settings = Self {
            seed: args.seed.or(g.seed).unwrap_or(0),
            cet_budget: args.cet_budget.or(g.cet_budget),
            max_experiments: args.max_experiments.or(g.max_experiments).unwrap_or(1_000_000),
            workers: args.workers.or(g.workers),
            out: args.out.clone().or_else(|| g.out.clone()),
            force: args.force || g.force.unwrap_or(false),
            normalization,
            model,
            particles: args.particles.or(s.particles).unwrap_or(2000),
            resample: ResampleConfig {
                ess_threshold_fraction: args.ess_threshold.or(s.ess_threshold).unwrap_or(defaults.ess_threshold_fraction),
                mh_steps: args.mh_steps.or(s.mh_steps).unwrap_or(defaults.mh_steps),
                proposal_scale: args.proposal_scale.or(s.proposal_scale).unwrap_or(defaults.proposal_scale),
            },
            strategy,
        };
        settings.resample.validate()?;
        if settings.particles < 2 {
            return Err(CliError::Usage(format!("--particles must be at least 2, got {}", settings.particles)));
        }
        if settings.workers == Some(0) {
            return Err(CliError::Usage("--workers must be positive".into()));
        }
        Ok(settings)
    }

    /// Strategy configuration for `kind` with any overrides applied.
    pub fn strategy_config(&self, kind: StrategyKind) -> CliResult<StrategyConfig> {
        let o = &self.strategy;
        let mut c = StrategyConfig::for_kind(kind);
        if let Some(v) = o.candidates {
            c.candidates_per_iter = v;
        }
        if let Some(v) = o.hit_rank {
            c.hit_rank = v;
        }
        if let Some(v) = o.hits_to_expand {
            c.hits_to_expand = v;
        }
        if let Some(v) = o.warmup_shots {
            c.warmup_shots = v;
        }
        if let Some(v) = o.warmup_time {
            c.warmup_time = v;
        }
        if let Some(v) = o.initial_upper {
            c.initial_upper = v;
        }
        // Shot override applies to the windowed strategies, whose default it mirrors.
        if let (Some(v), true) = (o.shots, kind.is_windowed()) {
            c.shots_per_measurement = v;
        }
        if let Some(v) = o.heuristic_multiplier {
            c.heuristic_multiplier = v;
        }
        if let Some(v) = o.ess_target {
            c.ess_target_fraction = v;
        }
        if o.rts_cap.is_some() {
            c.rts_cap = o.rts_cap;
        }
        if let Some(v) = o.cet_weighted_variance {
            c.cet_weighted_variance = v;
        }
        c.validate()?;
        Ok(c)
    }

    fn pool(&self) -> CliResult<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.workers {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| CliError::Runtime(e.to_string()))
    }
}

fn positive_budget(budget: Option<f64>, default: f64) -> CliResult<f64> {
    let b = budget.unwrap_or(default);
    if !(b > 0.0 && b.is_finite()) {
        return Err(CliError::Usage(format!("--cet-budget must be positive, got {b}")));
    }
    Ok(b)
}

pub fn cmd_run(args: &RunArgs) -> CliResult<()> {
    let file = load_file(args.common.config.as_deref())?;
    let settings = Settings::resolve(&args.common, &file)?;
    let kind_name = args
        .strategy
        .as_deref()
        .or(file.run.strategy.as_deref())
        .ok_or_else(|| CliError::Usage("--strategy is required".into()))?;
    let strategy = settings.strategy_config(parse_kind(kind_name)?)?;
    let omega = match args.omega.or(file.run.omega) {
        Some(w) => w,
        None => crate::bench::run_assignment(settings.seed, 0).0,
    };
    let system = TrueSystem::new(omega, settings.model)?;
    let cfg = RunConfig {
        strategy: strategy.clone(),
        particles: settings.particles,
        resample: settings.resample,
        cet_budget: positive_budget(settings.cet_budget, 1e4)?,
        max_experiments: settings.max_experiments,
        seed: settings.seed,
    };
    let trace = run_estimation(&system, &cfg)?;
    let out = settings.out.clone().unwrap_or_else(|| PathBuf::from("."));
    trace.write_files(&out, "trace", &cfg, &settings.model)?;
    let last = trace.final_step();
    println!(
        "strategy={} omega={} status={:?} steps={} cet={} estimate={} std={} n_experiments={}",
        strategy.kind,
        omega,
        trace.terminal_status,
        trace.steps.len(),
        trace.final_cet(),
        last.map_or(f64::NAN, |s| s.estimate),
        last.map_or(f64::NAN, |s| s.std),
        trace.n_experiments()
    );
    if trace.terminal_status == TerminalStatus::Degenerate {
        return Err(CliError::Degenerate(trace.diagnostic.unwrap_or_else(|| "degenerate run".into())));
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchEcho<'a> {
    settings: &'a Settings,
    benchmark: &'a BenchmarkConfig,
}

pub fn cmd_bench(args: &BenchArgs) -> CliResult<()> {
    let file = load_file(args.common.config.as_deref())?;
    let settings = Settings::resolve(&args.common, &file)?;
    let names = args
        .strategies
        .clone()
        .or_else(|| file.bench.strategies.clone())
        .unwrap_or_else(|| StrategyKind::ALL.iter().map(|k| k.name().to_string()).collect());
    let strategies = names
        .iter()
        .map(|n| settings.strategy_config(parse_kind(n)?))
        .collect::<CliResult<Vec<_>>>()?;

    let cfg = BenchmarkConfig {
        n_runs: args.runs.or(file.bench.runs).unwrap_or(100),
        strategies,
        model: settings.model,
        cet_budget: positive_budget(settings.cet_budget, 1e4)?,
        max_experiments: settings.max_experiments,
        particles: settings.particles,
        resample: settings.resample,
        bins: args.bins.or(file.bench.bins).unwrap_or(30),
        fit_window: args.fit_window.or(file.bench.fit_window).unwrap_or(0.8),
        master_seed: settings.seed,
        normalization: settings.normalization,
    };
    cfg.validate()?;

    let out = settings.out.clone().unwrap_or_else(|| PathBuf::from("bench-out"));
    if out.exists() && !settings.force {
        return Err(CliError::Conflict(format!(
            "output directory {} exists; pass --force to overwrite",
            out.display()
        )));
    }
    fs::create_dir_all(&out).map_err(|e| CliError::Runtime(e.to_string()))?;

    let pool = settings.pool()?;
    let result = pool.install(|| run_benchmark(&cfg))?;
    let analysis = analyze(&result, &cfg)?;
    write_outputs(&out, &cfg, &result, &analysis, &BenchEcho { settings: &settings, benchmark: &cfg })?;

    println!("{:<6} {:>10} {:>12} {:>10} {:>12} {:>9}", "name", "exponent", "multiplier", "residual", "mean_N", "failures");
    for s in &analysis.strategies {
        match s.fit {
            Some(f) => println!(
                "{:<6} {:>10.4} {:>12.4e} {:>10.4} {:>12.1} {:>9}",
                s.name,
                f.exponent,
                f.multiplier,
                f.residual,
                s.mean_n_experiments,
                s.failures.len()
            ),
            None => println!(
                "{:<6} {:>10} {:>12} {:>10} {:>12.1} {:>9}",
                s.name,
                "-",
                "-",
                "-",
                s.mean_n_experiments,
                s.failures.len()
            ),
        }
    }
    if analysis.any_failed() {
        let failed: Vec<&str> = analysis.strategies.iter().filter(|s| s.failed).map(|s| s.name.as_str()).collect();
        return Err(CliError::Degenerate(format!(
            "more than 10% of runs degenerated for: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> CliResult<()> {
    let file = load_file(args.common.config.as_deref())?;
    let settings = Settings::resolve(&args.common, &file)?;
    let kind = parse_kind(
        args.kind
            .as_deref()
            .or(file.calibrate.kind.as_deref())
            .ok_or_else(|| CliError::Usage("--kind is required".into()))?,
    )?;
    if !matches!(kind, StrategyKind::Sh | StrategyKind::Pgh) {
        return Err(CliError::Usage(format!("--kind must be sh or pgh, got {kind}")));
    }
    let grid = args
        .grid
        .clone()
        .or_else(|| file.calibrate.grid.clone())
        .unwrap_or_else(|| vec![0.25, 0.5, 1.0, 2.0]);
    if grid.is_empty() {
        return Err(CliError::Usage("--grid must not be empty".into()));
    }
    if grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
        return Err(CliError::Usage("--grid values must be positive".into()));
    }
    let defaults = CalibrationConfig::new(kind, settings.model, grid, settings.seed);
    let cfg = CalibrationConfig {
        runs: args.runs.or(file.calibrate.runs).unwrap_or(defaults.runs),
        cet_budget: positive_budget(settings.cet_budget, defaults.cet_budget)?,
        max_experiments: settings.max_experiments,
        // Calibration keeps its own, smaller particle default.
        particles: args.common.particles.or(file.smc.particles).unwrap_or(defaults.particles),
        resample: settings.resample,
        normalization: settings.normalization,
        ..defaults
    };
    let result = calibrate_multiplier(&cfg)?;
    for s in &result.scores {
        println!("c={:<8} rmse={:.6e} degenerate={}", s.multiplier, s.rmse, s.degenerate_runs);
    }
    println!("selected {} multiplier: {}", kind, result.selected);

    let out = settings.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out).map_err(|e| CliError::Runtime(e.to_string()))?;
    let json = serde_json::json!({ "config": cfg, "result": result });
    fs::write(out.join("calibration.json"), serde_json::to_string_pretty(&json).map_err(Error::from)?)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

pub fn cmd_cost(args: &CostArgs) -> CliResult<()> {
    let file = load_file(args.config.as_deref())?;
    let get = |flag: Option<i64>, key: Option<i64>, name: &str| -> CliResult<u64> {
        let v = flag.or(key).ok_or_else(|| CliError::Usage(format!("--{name} is required")))?;
        if v <= 0 {
            return Err(CliError::Usage(format!("--{name} must be positive, got {v}")));
        }
        Ok(v as u64)
    };
    let k = get(args.k, file.cost.k, "K")?;
    let m = get(args.m, file.cost.m, "M")?;
    let n = get(args.n, file.cost.n, "N")?;
    let model = CostModel::new(k, m, n)?;
    println!("K={k} M={m} N={n}  C1={} C2={} C1+2C2={}", model.c1(), model.c2(), model.scenario_cost());
    for (kind, cost) in model.table() {
        match cost {
            Ok(c) => println!("{:<14} {c}", kind.name()),
            Err(e) => println!("{:<14} overflow ({e})", kind.name()),
        }
    }
    Ok(())
}

/// Parses `args` and dispatches; returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Cost(a) => cmd_cost(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
