//! Synthetic qubit and the sequential estimation loop.
//!
//! Each run owns one ChaCha8 stream. The loop is: choose a control,
//! measure it (binomial sampling from the true system), reweight, resample
//! when the ESS drops, record a trace step. Runs stop at the CET budget,
//! the experiment cap, or on a degenerate posterior.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::LikelihoodModel;
use crate::smc::{DataHistory, ExperimentRecord, ParticleEnsemble, ResampleConfig, Support};
use crate::strategy::{
    pgh_choose, rts_schedule, sh_choose, wes_choose, StrategyConfig, StrategyKind, WindowState,
};

pub type RunRng = ChaCha8Rng;

/// RNG for run `run_index` of a benchmark seeded with `master_seed`.
pub fn run_stream(master_seed: u64, run_index: u64) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(run_index);
    rng
}

/// The simulated system: the frequency to recover and its dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueSystem {
    pub omega_true: f64,
    pub model: LikelihoodModel,
}

impl TrueSystem {
    pub fn new(omega_true: f64, model: LikelihoodModel) -> Result<Self> {
        if !Support::default().contains(omega_true) {
            return Err(Error::Config(format!("true frequency {omega_true} outside ]0, π/2]")));
        }
        Ok(Self { omega_true, model })
    }
}

/// Draws `ones ~ Binomial(shots, P(1 | ω_true; t))`.
pub fn simulate_measurement<R: Rng + ?Sized>(
    system: &TrueSystem,
    t: f64,
    shots: u32,
    rng: &mut R,
) -> Result<ExperimentRecord> {
    if shots == 0 {
        return Err(Error::Domain("shots must be positive".into()));
    }
    let p = system.model.likelihood(crate::Outcome::One, system.omega_true, t)?.clamp(0.0, 1.0);
    let ones = Binomial::new(u64::from(shots), p)
        .map_err(|e| Error::Domain(e.to_string()))?
        .sample(rng);
    ExperimentRecord::new(t, shots, ones as u32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub strategy: StrategyConfig,
    pub particles: usize,
    #[serde(default)]
    pub resample: ResampleConfig,
    pub cet_budget: f64,
    /// Safety cap on the number of single-shot experiments.
    pub max_experiments: u64,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(strategy: StrategyConfig, seed: u64) -> Self {
        Self {
            strategy,
            particles: 2000,
            resample: ResampleConfig::default(),
            cet_budget: 1e4,
            max_experiments: 1_000_000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        self.resample.validate()?;
        if self.particles < 2 {
            return Err(Error::Config(format!("particle count must be at least 2, got {}", self.particles)));
        }
        if !(self.cet_budget > 0.0 && self.cet_budget.is_finite()) {
            return Err(Error::Config(format!("CET budget must be positive, got {}", self.cet_budget)));
        }
        if self.max_experiments == 0 {
            return Err(Error::Config("max_experiments must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    BudgetReached,
    MaxExperiments,
    Degenerate,
}

/// State after one measurement round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub cet: f64,
    pub t_chosen: f64,
    pub shots: u32,
    pub ones: u32,
    /// Posterior mean after the update (and resampling, if any).
    pub estimate: f64,
    pub std: f64,
    /// ESS right after the update, before any resampling.
    pub ess: f64,
    /// Cumulative single-shot experiments.
    pub n_experiments: u64,
    /// Window upper bound in effect after the step, for windowed strategies.
    #[serde(skip)]
    pub window_upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub omega_true: f64,
    pub initial_std: f64,
    pub steps: Vec<TraceStep>,
    pub terminal_status: TerminalStatus,
    pub diagnostic: Option<String>,
}

impl RunTrace {
    pub fn final_step(&self) -> Option<&TraceStep> {
        self.steps.last()
    }

    pub fn final_cet(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cet)
    }

    pub fn n_experiments(&self) -> u64 {
        self.steps.last().map_or(0, |s| s.n_experiments)
    }

    pub fn is_degenerate(&self) -> bool {
        self.terminal_status == TerminalStatus::Degenerate
    }

    /// Writes the per-step CSV.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for s in &self.steps {
            w.serialize(s)?;
        }
        if self.steps.is_empty() {
            w.write_record([
                "step", "cet", "t_chosen", "shots", "ones", "estimate", "std", "ess", "n_experiments",
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar.
    pub fn write_files(&self, dir: &Path, stem: &str, config: &RunConfig, model: &LikelihoodModel) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_csv(fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        let sidecar = TraceSidecar {
            config,
            model,
            seed: config.seed,
            omega_true: self.omega_true,
            terminal_status: self.terminal_status,
            diagnostic: self.diagnostic.as_deref(),
        };
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct TraceSidecar<'a> {
    config: &'a RunConfig,
    model: &'a LikelihoodModel,
    seed: u64,
    omega_true: f64,
    terminal_status: TerminalStatus,
    diagnostic: Option<&'a str>,
}

/// A control to measure: evolution time and shot count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Control {
    pub time: f64,
    pub shots: u32,
}

/// What a policy sees when choosing the next control.
pub struct PosteriorView<'a> {
    pub ensemble: &'a ParticleEnsemble,
    pub model: &'a LikelihoodModel,
    pub history: &'a DataHistory,
    pub cet: f64,
}

/// Chooses evolution times. Implementations may keep state across calls.
pub trait ControlPolicy {
    fn next_control(&mut self, view: &PosteriorView<'_>, rng: &mut RunRng) -> Result<Control>;

    /// Current search window, for windowed strategies.
    fn window(&self) -> Option<WindowState> {
        None
    }
}

struct WindowedPolicy {
    cfg: StrategyConfig,
    window: WindowState,
    warmup_left: u32,
}

impl ControlPolicy for WindowedPolicy {
    fn next_control(&mut self, view: &PosteriorView<'_>, rng: &mut RunRng) -> Result<Control> {
        if self.warmup_left > 0 {
            self.warmup_left -= 1;
            return Ok(Control { time: self.cfg.warmup_time, shots: 1 });
        }
        let choice = wes_choose(view.ensemble, view.model, self.window, &self.cfg, view.cet, rng)?;
        self.window = choice.window;
        Ok(Control { time: choice.time, shots: self.cfg.shots_per_measurement })
    }

    fn window(&self) -> Option<WindowState> {
        Some(self.window)
    }
}

struct SigmaPolicy(StrategyConfig);

impl ControlPolicy for SigmaPolicy {
    fn next_control(&mut self, view: &PosteriorView<'_>, _rng: &mut RunRng) -> Result<Control> {
        Ok(Control { time: sh_choose(view.ensemble, &self.0)?, shots: self.0.shots_per_measurement })
    }
}

struct ParticleGuessPolicy(StrategyConfig);

impl ControlPolicy for ParticleGuessPolicy {
    fn next_control(&mut self, view: &PosteriorView<'_>, rng: &mut RunRng) -> Result<Control> {
        Ok(Control { time: pgh_choose(view.ensemble, &self.0, rng)?, shots: self.0.shots_per_measurement })
    }
}

/// Random times, pre-drawn in ascending batches sized so that their
/// expected total covers the remaining CET budget.
struct RandomTimesPolicy {
    cap: f64,
    shots: u32,
    budget: f64,
    queue: VecDeque<f64>,
}

impl ControlPolicy for RandomTimesPolicy {
    fn next_control(&mut self, view: &PosteriorView<'_>, rng: &mut RunRng) -> Result<Control> {
        if self.queue.is_empty() {
            let remaining = (self.budget - view.cet).max(0.0) / f64::from(self.shots);
            let n = ((2.0 * remaining / self.cap).ceil() as usize).max(1);
            self.queue.extend(rts_schedule(n, self.cap, rng));
        }
        let time = self.queue.pop_front().expect("non-empty schedule");
        Ok(Control { time, shots: self.shots })
    }
}

/// The built-in policy for a strategy configuration.
pub fn policy_for(cfg: &StrategyConfig, model: &LikelihoodModel, cet_budget: f64) -> Box<dyn ControlPolicy> {
    match cfg.kind {
        StrategyKind::Wes | StrategyKind::Awes => Box::new(WindowedPolicy {
            cfg: cfg.clone(),
            window: WindowState::initial(cfg.initial_upper),
            warmup_left: cfg.warmup_shots,
        }),
        StrategyKind::Sh => Box::new(SigmaPolicy(cfg.clone())),
        StrategyKind::Pgh => Box::new(ParticleGuessPolicy(cfg.clone())),
        StrategyKind::Rts => Box::new(RandomTimesPolicy {
            cap: cfg.effective_rts_cap(model),
            shots: cfg.shots_per_measurement,
            budget: cet_budget,
            queue: VecDeque::new(),
        }),
    }
}

/// Runs one estimation with the configured strategy.
///
/// The same likelihood model generates the data and drives inference.
pub fn run_estimation(system: &TrueSystem, cfg: &RunConfig) -> Result<RunTrace> {
    cfg.validate()?;
    let mut policy = policy_for(&cfg.strategy, &system.model, cfg.cet_budget);
    run_with_policy(system, cfg, policy.as_mut())
}

/// Runs one estimation with an arbitrary control policy.
pub fn run_with_policy(system: &TrueSystem, cfg: &RunConfig, policy: &mut dyn ControlPolicy) -> Result<RunTrace> {
    cfg.resample.validate()?;
    let support = Support::default();
    let model = &system.model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ensemble = ParticleEnsemble::init_prior(cfg.particles, support, &mut rng)?;
    let initial_std = ensemble.mean_std().1;
    let mut history = DataHistory::new();
    let mut steps = Vec::new();
    let mut cet = 0.0;
    let mut n_experiments: u64 = 0;

    let degenerate = |steps: Vec<TraceStep>, e: Error| RunTrace {
        omega_true: system.omega_true,
        initial_std,
        steps,
        terminal_status: TerminalStatus::Degenerate,
        diagnostic: Some(e.to_string()),
    };

    let terminal_status = loop {
        if cet >= cfg.cet_budget {
            break TerminalStatus::BudgetReached;
        }
        if n_experiments >= cfg.max_experiments {
            break TerminalStatus::MaxExperiments;
        }
        let view = PosteriorView { ensemble: &ensemble, model, history: &history, cet };
        let control = match policy.next_control(&view, &mut rng) {
            Ok(c) => c,
            Err(e) => return Ok(degenerate(steps, e)),
        };
        if !(control.time > 0.0 && control.time.is_finite()) || control.shots == 0 {
            return Err(Error::Domain(format!(
                "policy produced an invalid control: t={}, shots={}",
                control.time, control.shots
            )));
        }
        let record = simulate_measurement(system, control.time, control.shots, &mut rng)?;
        ensemble = match ensemble.bayes_update(model, &record) {
            Ok(e) => e,
            Err(e) => return Ok(degenerate(steps, e)),
        };
        history.push(record);
        let ess = ensemble.ess();
        let outcome = ensemble.maybe_resample(&history, model, support, &cfg.resample, &mut rng);
        ensemble = outcome.ensemble;

        cet += control.time * f64::from(control.shots);
        n_experiments += u64::from(control.shots);
        let (estimate, std) = ensemble.mean_std();
        steps.push(TraceStep {
            step: steps.len(),
            cet,
            t_chosen: control.time,
            shots: control.shots,
            ones: record.ones,
            estimate,
            std,
            ess,
            n_experiments,
            window_upper: policy.window().map(|w| w.upper),
        });
    };

    Ok(RunTrace { omega_true: system.omega_true, initial_std, steps, terminal_status, diagnostic: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    struct Fixed(f64, u32);

    impl ControlPolicy for Fixed {
        fn next_control(&mut self, _: &PosteriorView<'_>, _: &mut RunRng) -> Result<Control> {
            Ok(Control { time: self.0, shots: self.1 })
        }
    }

    fn quick(kind: StrategyKind, seed: u64) -> RunConfig {
        RunConfig { particles: 300, cet_budget: 2e3, ..RunConfig::new(StrategyConfig::for_kind(kind), seed) }
    }

    #[test]
    fn measurement_examples() {
        let sys = TrueSystem { omega_true: PI, model: LikelihoodModel::ideal() };
        let mut rng = RunRng::seed_from_u64(1);
        for _ in 0..50 {
            assert_eq!(simulate_measurement(&sys, 1.0, 5, &mut rng).unwrap().ones, 5);
        }
        let sys = TrueSystem::new(0.9, LikelihoodModel::ideal()).unwrap();
        for _ in 0..50 {
            assert_eq!(simulate_measurement(&sys, 0.0, 7, &mut rng).unwrap().ones, 0);
        }
        let a = simulate_measurement(&sys, 3.3, 10, &mut RunRng::seed_from_u64(4)).unwrap();
        let b = simulate_measurement(&sys, 3.3, 10, &mut RunRng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn true_system_must_lie_in_prior_support() {
        assert!(TrueSystem::new(0.0, LikelihoodModel::ideal()).is_err());
        assert!(TrueSystem::new(2.0, LikelihoodModel::ideal()).is_err());
        assert!(TrueSystem::new(std::f64::consts::FRAC_PI_2, LikelihoodModel::ideal()).is_ok());
    }

    #[test]
    fn fixed_policy_cet_bookkeeping() {
        let sys = TrueSystem::new(0.7, LikelihoodModel::ideal()).unwrap();
        let cfg = RunConfig { cet_budget: 10.0, particles: 200, ..RunConfig::new(StrategyConfig::for_kind(StrategyKind::Sh), 3) };
        let trace = run_with_policy(&sys, &cfg, &mut Fixed(1.0, 1)).unwrap();
        assert_eq!(trace.steps.len(), 10);
        for (i, s) in trace.steps.iter().enumerate() {
            assert_eq!(s.cet, (i + 1) as f64);
            assert_eq!(s.n_experiments, (i + 1) as u64);
        }
        assert_eq!(trace.terminal_status, TerminalStatus::BudgetReached);
    }

    #[test]
    fn wes_starts_with_warmup() {
        let sys = TrueSystem::new(1.1, LikelihoodModel::ideal()).unwrap();
        let trace = run_estimation(&sys, &quick(StrategyKind::Wes, 9)).unwrap();
        assert!(trace.steps.len() > 10);
        for s in &trace.steps[..10] {
            assert_eq!((s.t_chosen, s.shots), (1.0, 1));
        }
        assert_eq!(trace.steps[10].shots, 10);
        assert!(trace.steps[10].t_chosen <= 100.0);
    }

    #[test]
    fn heuristics_skip_warmup() {
        let sys = TrueSystem::new(1.1, LikelihoodModel::ideal()).unwrap();
        let trace = run_estimation(&sys, &quick(StrategyKind::Sh, 9)).unwrap();
        // First control is c/σ of the flat prior on ]0, π/2].
        let prior_std = std::f64::consts::FRAC_PI_2 / 12f64.sqrt();
        assert!((trace.steps[0].t_chosen - 1.0 / prior_std).abs() < 0.1);
    }

    #[test]
    fn run_is_deterministic() {
        let sys = TrueSystem::new(0.4, LikelihoodModel::ideal()).unwrap();
        for kind in StrategyKind::ALL {
            let a = run_estimation(&sys, &quick(kind, 17)).unwrap();
            let b = run_estimation(&sys, &quick(kind, 17)).unwrap();
            assert_eq!(a, b, "{kind}");
        }
    }

    #[test]
    fn max_experiments_cap() {
        let sys = TrueSystem::new(0.4, LikelihoodModel::ideal()).unwrap();
        let cfg = RunConfig { max_experiments: 25, ..quick(StrategyKind::Rts, 2) };
        let trace = run_estimation(&sys, &cfg).unwrap();
        assert_eq!(trace.terminal_status, TerminalStatus::MaxExperiments);
        assert_eq!(trace.n_experiments(), 25);
    }

    #[test]
    fn degenerate_policy_terminates_run() {
        struct Failing;
        impl ControlPolicy for Failing {
            fn next_control(&mut self, _: &PosteriorView<'_>, _: &mut RunRng) -> Result<Control> {
                Err(Error::DegenerateDistribution("test".into()))
            }
        }
        let sys = TrueSystem::new(0.4, LikelihoodModel::ideal()).unwrap();
        let trace = run_with_policy(&sys, &quick(StrategyKind::Sh, 1), &mut Failing).unwrap();
        assert!(trace.is_degenerate());
        assert!(trace.steps.is_empty());
    }

    #[test]
    fn csv_has_expected_columns() {
        let sys = TrueSystem::new(0.4, LikelihoodModel::ideal()).unwrap();
        let cfg = RunConfig { cet_budget: 3.0, particles: 50, ..quick(StrategyKind::Sh, 1) };
        let trace = run_with_policy(&sys, &cfg, &mut Fixed(1.0, 1)).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,cet,t_chosen,shots,ones,estimate,std,ess,n_experiments");
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn streams_differ_per_run_index() {
        let a: u64 = run_stream(5, 0).random();
        let b: u64 = run_stream(5, 1).random();
        let c: u64 = run_stream(5, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
