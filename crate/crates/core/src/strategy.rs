//! Control selection: which evolution time to measure at next.
//!
//! Five strategies are provided:
//!
//! * `wes`  - greedy expected-variance minimization over a window of
//!   candidate times that expands once high controls keep winning;
//! * `awes` - the same window machinery scored by how close the expected
//!   post-measurement ESS lands to a target fraction of `K`;
//! * `sh`   - `t = c / σ` from the posterior standard deviation;
//! * `pgh`  - `t = c / |ω_a − ω_b|` from two particles drawn by weight;
//! * `rts`  - non-adaptive uniform times on `]0, C]`, sorted ascending.
//!
//! Utilities evaluate single-shot look-ahead on the current weighted
//! particles without resampling the hypothetical posteriors.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::LikelihoodModel;
use crate::smc::{ess_of, weighted_moments, ParticleEnsemble};

/// Window upper bounds are never expanded past this.
pub const MAX_WINDOW_UPPER: f64 = 1e12;

/// Coincident particle draws tolerated by PGH before giving up.
pub const PGH_MAX_REDRAWS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Wes,
    Awes,
    Sh,
    Pgh,
    Rts,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] =
        [StrategyKind::Wes, StrategyKind::Awes, StrategyKind::Sh, StrategyKind::Pgh, StrategyKind::Rts];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Wes => "wes",
            StrategyKind::Awes => "awes",
            StrategyKind::Sh => "sh",
            StrategyKind::Pgh => "pgh",
            StrategyKind::Rts => "rts",
        }
    }

    /// Whether the strategy uses the candidate window and warm-up.
    pub fn is_windowed(self) -> bool {
        matches!(self, StrategyKind::Wes | StrategyKind::Awes)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wes" => Ok(StrategyKind::Wes),
            "awes" => Ok(StrategyKind::Awes),
            "sh" => Ok(StrategyKind::Sh),
            "pgh" => Ok(StrategyKind::Pgh),
            "rts" => Ok(StrategyKind::Rts),
            other => Err(Error::Config(format!("unknown strategy '{other}'"))),
        }
    }
}

/// Strategy parameters. Defaults come from [`StrategyConfig::for_kind`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub candidates_per_iter: usize,
    /// A hit is scored when the chosen time is among this many largest candidates.
    pub hit_rank: usize,
    pub hits_to_expand: u32,
    pub warmup_shots: u32,
    pub warmup_time: f64,
    pub initial_upper: f64,
    pub shots_per_measurement: u32,
    /// Proportionality constant `c` of the σ and particle-guess heuristics.
    pub heuristic_multiplier: f64,
    /// Cap `C` of the random-times strategy. `None` picks the coherence time
    /// when the model has one and `100` otherwise.
    pub rts_cap: Option<f64>,
    pub ess_target_fraction: f64,
    /// Score WES candidates by `E[σ²]·(CET + t)²` instead of `E[σ²]`.
    #[serde(default)]
    pub cet_weighted_variance: bool,
}

impl StrategyConfig {
    pub fn for_kind(kind: StrategyKind) -> Self {
        Self {
            kind,
            candidates_per_iter: 50,
            hit_rank: 3,
            hits_to_expand: 3,
            warmup_shots: 10,
            warmup_time: 1.0,
            initial_upper: 100.0,
            shots_per_measurement: if kind.is_windowed() { 10 } else { 1 },
            heuristic_multiplier: 1.0,
            rts_cap: None,
            ess_target_fraction: 0.5,
            cet_weighted_variance: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.candidates_per_iter == 0 {
            return bad("candidates_per_iter must be positive".into());
        }
        if self.hit_rank == 0 || self.hit_rank > self.candidates_per_iter {
            return bad(format!(
                "hit_rank must lie in 1..={}, got {}",
                self.candidates_per_iter, self.hit_rank
            ));
        }
        if self.hits_to_expand == 0 {
            return bad("hits_to_expand must be positive".into());
        }
        if self.warmup_shots == 0 || !(self.warmup_time > 0.0 && self.warmup_time.is_finite()) {
            return bad("warm-up needs positive shots and time".into());
        }
        if !(self.initial_upper > 0.0 && self.initial_upper <= MAX_WINDOW_UPPER) {
            return bad(format!("initial window upper bound out of range: {}", self.initial_upper));
        }
        if self.shots_per_measurement == 0 {
            return bad("shots_per_measurement must be positive".into());
        }
        if !(self.heuristic_multiplier > 0.0 && self.heuristic_multiplier.is_finite()) {
            return bad(format!("heuristic multiplier must be positive, got {}", self.heuristic_multiplier));
        }
        if let Some(c) = self.rts_cap {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("rts cap must be positive, got {c}"));
            }
        }
        if !(self.ess_target_fraction > 0.0 && self.ess_target_fraction <= 1.0) {
            return bad(format!("ess target must lie in (0, 1], got {}", self.ess_target_fraction));
        }
        Ok(())
    }

    /// The random-times cap in effect for `model`.
    pub fn effective_rts_cap(&self, model: &LikelihoodModel) -> f64 {
        self.rts_cap.or(model.coherence_time()).unwrap_or(100.0)
    }
}

/// Current search window `]lower, upper]` and its hit counter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowState {
    pub lower: f64,
    pub upper: f64,
    pub hits: u32,
}

impl WindowState {
    pub fn initial(upper: f64) -> Self {
        Self { lower: 0.0, upper, hits: 0 }
    }

    pub fn contains(&self, t: f64) -> bool {
        t > self.lower && t <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    pub time: f64,
    pub utility: f64,
    /// 1 for the largest candidate time of the iteration.
    pub time_rank_desc: usize,
}

/// Outcome of one windowed selection.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowChoice {
    pub time: f64,
    pub window: WindowState,
    pub evaluations: Vec<CandidateEvaluation>,
    pub hit: bool,
    pub expanded: bool,
}

/// Reusable buffers for the look-ahead weights of the two outcomes.
#[derive(Debug, Default)]
pub(crate) struct LookAhead {
    zero: Vec<f64>,
    one: Vec<f64>,
}

impl LookAhead {
    fn fill(&mut self, ensemble: &ParticleEnsemble, model: &LikelihoodModel, t: f64) {
        let vis = model.visibility(t);
        self.zero.clear();
        self.one.clear();
        for (&x, &w) in ensemble.locations().iter().zip(ensemble.weights()) {
            let (p0, p1) = LikelihoodModel::outcome_probs(vis, x, t);
            self.zero.push(w * p0);
            self.one.push(w * p1);
        }
    }

    fn branches(&self) -> [&[f64]; 2] {
        [&self.zero, &self.one]
    }

    pub(crate) fn expected_variance(
        &mut self,
        ensemble: &ParticleEnsemble,
        model: &LikelihoodModel,
        t: f64,
    ) -> f64 {
        self.fill(ensemble, model, t);
        let total: f64 = ensemble.weights().iter().sum();
        let mut expected = 0.0;
        for branch in self.branches() {
            let m = weighted_moments(ensemble.locations(), branch);
            if m.mass > 0.0 {
                expected += (m.mass / total) * m.var;
            }
        }
        expected
    }

    pub(crate) fn expected_ess(&mut self, ensemble: &ParticleEnsemble, model: &LikelihoodModel, t: f64) -> f64 {
        self.fill(ensemble, model, t);
        let total: f64 = ensemble.weights().iter().sum();
        let mut expected = 0.0;
        for branch in self.branches() {
            let mass: f64 = branch.iter().sum();
            if mass > 0.0 {
                expected += (mass / total) * ess_of(branch);
            }
        }
        expected
    }
}

/// Negative expected posterior variance after a single shot at `t`.
pub fn expected_variance_utility(ensemble: &ParticleEnsemble, model: &LikelihoodModel, t: f64) -> f64 {
    -LookAhead::default().expected_variance(ensemble, model, t)
}

/// Negative distance between the expected post-measurement ESS and `target·K`.
pub fn expected_ess_utility(ensemble: &ParticleEnsemble, model: &LikelihoodModel, t: f64, target: f64) -> f64 {
    let k = ensemble.len() as f64;
    -(LookAhead::default().expected_ess(ensemble, model, t) - target * k).abs()
}

/// Draws candidates in the window, scores them with `utility` and applies
/// the hit/expansion rule.
///
/// Candidates are all drawn before any is scored. Ties in utility go to the
/// smaller time.
pub fn choose_in_window<R, F>(window: WindowState, cfg: &StrategyConfig, rng: &mut R, mut utility: F) -> WindowChoice
where
    R: Rng + ?Sized,
    F: FnMut(f64) -> f64,
{
    let width = window.upper - window.lower;
    let times: Vec<f64> = (0..cfg.candidates_per_iter)
        .map(|_| window.upper - rng.random::<f64>() * width)
        .collect();

    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut ranks = vec![0; times.len()];
    for (rank, &i) in order.iter().enumerate() {
        ranks[i] = rank + 1;
    }

    let evaluations: Vec<CandidateEvaluation> = times
        .iter()
        .zip(&ranks)
        .map(|(&time, &time_rank_desc)| {
            let u = utility(time);
            CandidateEvaluation { time, utility: if u.is_nan() { f64::NEG_INFINITY } else { u }, time_rank_desc }
        })
        .collect();

    let best = evaluations
        .iter()
        .reduce(|best, e| {
            if e.utility > best.utility || (e.utility == best.utility && e.time < best.time) {
                e
            } else {
                best
            }
        })
        .copied()
        .expect("at least one candidate");

    let hit = best.time_rank_desc <= cfg.hit_rank;
    let mut next = window;
    let mut expanded = false;
    if hit {
        next.hits += 1;
        if next.hits >= cfg.hits_to_expand {
            next.hits = 0;
            let upper = 2.0 * window.upper;
            if upper > MAX_WINDOW_UPPER {
                log::warn!("window upper bound would exceed {MAX_WINDOW_UPPER:e}; not expanding");
            } else {
                next.lower = window.upper;
                next.upper = upper;
                expanded = true;
            }
        }
    }

    WindowChoice { time: best.time, window: next, evaluations, hit, expanded }
}

/// One WES/aWES selection on the current ensemble.
///
/// `cet` is the cumulative evolution time so far; it only enters the
/// optional CET-weighted variance utility.
pub fn wes_choose<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    model: &LikelihoodModel,
    window: WindowState,
    cfg: &StrategyConfig,
    cet: f64,
    rng: &mut R,
) -> Result<WindowChoice> {
    let mut scratch = LookAhead::default();
    let k = ensemble.len() as f64;
    match cfg.kind {
        StrategyKind::Wes if cfg.cet_weighted_variance => Ok(choose_in_window(window, cfg, rng, |t| {
            let horizon = cet + t;
            -scratch.expected_variance(ensemble, model, t) * horizon * horizon
        })),
        StrategyKind::Wes => {
            Ok(choose_in_window(window, cfg, rng, |t| -scratch.expected_variance(ensemble, model, t)))
        }
        StrategyKind::Awes => Ok(choose_in_window(window, cfg, rng, |t| {
            -(scratch.expected_ess(ensemble, model, t) - cfg.ess_target_fraction * k).abs()
        })),
        other => Err(Error::Config(format!("'{other}' is not a windowed strategy"))),
    }
}

/// σ heuristic: `c / std`.
pub fn sh_choose(ensemble: &ParticleEnsemble, cfg: &StrategyConfig) -> Result<f64> {
    let (_, std) = ensemble.mean_std();
    let t = cfg.heuristic_multiplier / std;
    if !(std > 0.0) || !t.is_finite() {
        return Err(Error::DegenerateDistribution(format!("posterior std is {std}")));
    }
    Ok(t)
}

/// Particle-guess heuristic: `c / |ω_a − ω_b|` for two weighted draws.
pub fn pgh_choose<R: Rng + ?Sized>(ensemble: &ParticleEnsemble, cfg: &StrategyConfig, rng: &mut R) -> Result<f64> {
    pgh_from_draws(cfg.heuristic_multiplier, || {
        let a = ensemble.locations()[ensemble.sample_index(rng)];
        let b = ensemble.locations()[ensemble.sample_index(rng)];
        (a, b)
    })
}

/// PGH core with an injectable pair sampler; redraws coincident pairs.
pub fn pgh_from_draws<F: FnMut() -> (f64, f64)>(multiplier: f64, mut draw: F) -> Result<f64> {
    for _ in 0..=PGH_MAX_REDRAWS {
        let (a, b) = draw();
        let d = (a - b).abs();
        if d > 0.0 {
            let t = multiplier / d;
            if t.is_finite() {
                return Ok(t);
            }
        }
    }
    Err(Error::DegenerateDistribution(format!(
        "{PGH_MAX_REDRAWS} redraws produced coincident particles"
    )))
}

/// `n` uniform times on `]0, cap]` in ascending order.
pub fn rts_schedule<R: Rng + ?Sized>(n: usize, cap: f64, rng: &mut R) -> Vec<f64> {
    let mut times: Vec<f64> = (0..n).map(|_| cap - rng.random::<f64>() * cap).collect();
    times.sort_by(f64::total_cmp);
    times
}
