//! Weighted-particle representation of the posterior over ω.
//!
//! The ensemble is an immutable value: Bayesian updates and resampling
//! return new ensembles. Resampling is resample-move: systematic
//! resampling followed by Gaussian random-walk Metropolis steps whose
//! stationary distribution is the full-data posterior (flat prior on the
//! support times the likelihood of every record in the history).

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::LikelihoodModel;

/// One measurement setting and its binomially aggregated result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub time: f64,
    pub shots: u32,
    /// Number of shots with outcome `1`.
    pub ones: u32,
}

impl ExperimentRecord {
    pub fn new(time: f64, shots: u32, ones: u32) -> Result<Self> {
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::Domain(format!("record time must be finite and >= 0, got {time}")));
        }
        if shots == 0 {
            return Err(Error::Domain("record needs at least one shot".into()));
        }
        if ones > shots {
            return Err(Error::Domain(format!("ones ({ones}) exceeds shots ({shots})")));
        }
        Ok(Self { time, shots, ones })
    }
}

/// Append-only list of records gathered during a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataHistory {
    records: Vec<ExperimentRecord>,
}

impl DataHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: ExperimentRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[ExperimentRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Log-likelihood of the whole history at `omega`.
    pub fn log_likelihood(&self, model: &LikelihoodModel, omega: f64) -> f64 {
        let mut acc = 0.0;
        for r in &self.records {
            acc += model.record_log_likelihood(omega, r);
            if acc == f64::NEG_INFINITY {
                break;
            }
        }
        acc
    }
}

impl FromIterator<ExperimentRecord> for DataHistory {
    fn from_iter<I: IntoIterator<Item = ExperimentRecord>>(iter: I) -> Self {
        Self { records: iter.into_iter().collect() }
    }
}

/// Half-open interval `]lower, upper]` carrying the flat prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub lower: f64,
    pub upper: f64,
}

impl Default for Support {
    fn default() -> Self {
        Self { lower: 0.0, upper: FRAC_PI_2 }
    }
}

impl Support {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::Config(format!("invalid support ]{lower}, {upper}]")));
        }
        Ok(Self { lower, upper })
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        x > self.lower && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Uniform draw on `]lower, upper]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.upper - u * self.width()
    }
}

/// Settings of the ESS-triggered resample-move step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleConfig {
    /// Resample when `ess < ess_threshold_fraction * K`.
    pub ess_threshold_fraction: f64,
    pub mh_steps: u32,
    /// Proposal std as a multiple of the current ensemble std.
    pub proposal_scale: f64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self { ess_threshold_fraction: 0.5, mh_steps: 2, proposal_scale: 0.1 }
    }
}

impl ResampleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ess_threshold_fraction > 0.0 && self.ess_threshold_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "ess threshold fraction must lie in (0, 1], got {}",
                self.ess_threshold_fraction
            )));
        }
        if self.mh_steps == 0 {
            return Err(Error::Config("mh_steps must be positive".into()));
        }
        if !(self.proposal_scale.is_finite() && self.proposal_scale > 0.0) {
            return Err(Error::Config(format!(
                "proposal scale must be positive, got {}",
                self.proposal_scale
            )));
        }
        Ok(())
    }
}

/// Mass, mean and population variance of a weighted point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Moments {
    pub mass: f64,
    pub mean: f64,
    pub var: f64,
}

/// Two-pass weighted moments; weights need not be normalized.
pub(crate) fn weighted_moments(locations: &[f64], weights: &[f64]) -> Moments {
    let mut mass = 0.0;
    let mut first = 0.0;
    for (&x, &w) in locations.iter().zip(weights) {
        mass += w;
        first += w * x;
    }
    if mass <= 0.0 {
        return Moments { mass, mean: f64::NAN, var: f64::NAN };
    }
    let mean = first / mass;
    let mut second = 0.0;
    for (&x, &w) in locations.iter().zip(weights) {
        let d = x - mean;
        second += w * d * d;
    }
    Moments { mass, mean, var: second / mass }
}

/// `(Σw)² / Σw²`.
pub(crate) fn ess_of(weights: &[f64]) -> f64 {
    let (s, s2) = weights.iter().fold((0.0, 0.0), |(s, s2), &w| (s + w, s2 + w * w));
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

/// Result of [`ParticleEnsemble::maybe_resample`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResampleOutcome {
    pub ensemble: ParticleEnsemble,
    pub resampled: bool,
    /// Set when the ensemble had zero spread and no Metropolis moves ran.
    pub moves_skipped: bool,
    pub proposed: usize,
    pub accepted: usize,
}

/// Weighted sample set over ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    locations: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleEnsemble {
    /// Builds an ensemble, normalizing the weights.
    pub fn new(locations: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if locations.len() != weights.len() {
            return Err(Error::Config(format!(
                "{} locations but {} weights",
                locations.len(),
                weights.len()
            )));
        }
        if locations.len() < 2 {
            return Err(Error::Config("an ensemble needs at least two particles".into()));
        }
        if locations.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite particle location".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Domain("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Domain("weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { locations, weights })
    }

    /// Equal-weight ensemble at the given locations.
    pub fn equally_weighted(locations: Vec<f64>) -> Result<Self> {
        let k = locations.len();
        Self::new(locations, vec![1.0; k])
    }

    /// `k` particles drawn uniformly from `support`, each with weight `1/k`.
    pub fn init_prior<R: Rng + ?Sized>(k: usize, support: Support, rng: &mut R) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("particle count must be at least 2, got {k}")));
        }
        let locations = (0..k).map(|_| support.sample(rng)).collect();
        let w = 1.0 / k as f64;
        Ok(Self { locations, weights: vec![w; k] })
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Effective sample size `1 / Σw²`.
    pub fn ess(&self) -> f64 {
        ess_of(&self.weights)
    }

    pub(crate) fn moments(&self) -> Moments {
        weighted_moments(&self.locations, &self.weights)
    }

    /// Weighted mean and population standard deviation.
    pub fn mean_std(&self) -> (f64, f64) {
        let m = self.moments();
        (m.mean, m.var.max(0.0).sqrt())
    }

    /// Reweights by the likelihood of `record`. Locations are unchanged.
    pub fn bayes_update(&self, model: &LikelihoodModel, record: &ExperimentRecord) -> Result<Self> {
        let mut log_factors: Vec<f64> = self
            .locations
            .iter()
            .map(|&w| model.record_log_likelihood(w, record))
            .collect();
        let max = self
            .weights
            .iter()
            .zip(&log_factors)
            .filter(|(&w, _)| w > 0.0)
            .map(|(_, &l)| l)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY || max.is_nan() {
            return Err(Error::DegeneratePosterior(format!(
                "record (t={}, shots={}, ones={}) has zero likelihood under every particle",
                record.time, record.shots, record.ones
            )));
        }
        if log_factors.iter().all(|&l| l == max) {
            // Uninformative datum: the posterior is the prior, bit for bit.
            return Ok(self.clone());
        }
        for l in log_factors.iter_mut() {
            *l = (*l - max).exp();
        }
        let mut weights: Vec<f64> =
            self.weights.iter().zip(&log_factors).map(|(w, f)| w * f).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegeneratePosterior("posterior weights vanished".into()));
        }
        for w in weights.iter_mut() {
            *w /= total;
        }
        Ok(Self { locations: self.locations.clone(), weights })
    }

    /// Index drawn with probability proportional to its weight.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.weights.iter().sum::<f64>();
        let mut acc = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        // Rounding can leave u at the very top; take the last positive weight.
        self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(self.len() - 1)
    }

    /// Systematic resampling: `k` equally spaced pointers with one uniform offset.
    pub(crate) fn systematic_indices<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let k = self.len();
        let step = 1.0 / k as f64;
        let offset: f64 = rng.random::<f64>() * step;
        let mut indices = Vec::with_capacity(k);
        let mut cumulative = self.weights[0];
        let mut j = 0;
        for i in 0..k {
            let pointer = offset + i as f64 * step;
            while pointer >= cumulative && j + 1 < k {
                j += 1;
                cumulative += self.weights[j];
            }
            // Skip zero-weight tail particles that rounding could land on.
            while self.weights[j] == 0.0 && j > 0 {
                j -= 1;
            }
            indices.push(j);
        }
        indices
    }

    /// Resample-move when the ESS falls below the configured fraction of `K`.
    ///
    /// Above the threshold the input is returned unchanged. Otherwise
    /// locations are drawn by systematic resampling, each is moved by
    /// `cfg.mh_steps` Metropolis steps targeting the posterior given
    /// `history`, and weights are reset to `1/K`.
    pub fn maybe_resample<R: Rng + ?Sized>(
        &self,
        history: &DataHistory,
        model: &LikelihoodModel,
        support: Support,
        cfg: &ResampleConfig,
        rng: &mut R,
    ) -> ResampleOutcome {
        let k = self.len();
        if self.ess() >= cfg.ess_threshold_fraction * k as f64 {
            return ResampleOutcome {
                ensemble: self.clone(),
                resampled: false,
                moves_skipped: false,
                proposed: 0,
                accepted: 0,
            };
        }

        let (_, std) = self.mean_std();
        let indices = self.systematic_indices(rng);
        let mut locations: Vec<f64> = indices.iter().map(|&i| self.locations[i]).collect();
        let weights = vec![1.0 / k as f64; k];

        if !(std > 0.0) {
            log::warn!("ensemble has zero spread; resampling without Metropolis moves");
            return ResampleOutcome {
                ensemble: Self { locations, weights },
                resampled: true,
                moves_skipped: true,
                proposed: 0,
                accepted: 0,
            };
        }

        let scale = cfg.proposal_scale * std;
        let mut proposed = 0;
        let mut accepted = 0;
        let mut current_ll: Vec<f64> = Vec::with_capacity(k);
        // Duplicates from resampling share a log-likelihood.
        let mut cache: Option<(usize, f64)> = None;
        for &i in &indices {
            let ll = match cache {
                Some((j, ll)) if j == i => ll,
                _ => {
                    let ll = history.log_likelihood(model, self.locations[i]);
                    cache = Some((i, ll));
                    ll
                }
            };
            current_ll.push(ll);
        }

        for (x, ll) in locations.iter_mut().zip(current_ll.iter_mut()) {
            for _ in 0..cfg.mh_steps {
                let z: f64 = StandardNormal.sample(rng);
                let candidate = *x + scale * z;
                let u: f64 = rng.random();
                proposed += 1;
                if !support.contains(candidate) {
                    continue;
                }
                let candidate_ll = history.log_likelihood(model, candidate);
                if candidate_ll == f64::NEG_INFINITY {
                    continue;
                }
                if u.ln() < candidate_ll - *ll {
                    *x = candidate;
                    *ll = candidate_ll;
                    accepted += 1;
                }
            }
        }

        ResampleOutcome {
            ensemble: Self { locations, weights },
            resampled: true,
            moves_skipped: false,
            proposed,
            accepted,
        }
    }
}
