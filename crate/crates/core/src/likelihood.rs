//! Binary-outcome likelihood of a qubit precessing at angular frequency ω.
//!
//! With the initial state an eigenstate of the measured observable and
//! outcome `0` labelling that eigenstate, the ideal outcome distribution is
//!
//! ```text
//! P(0 | ω; t) = cos²(ωt/2)        P(1 | ω; t) = sin²(ωt/2)
//! ```
//!
//! A finite coherence time `T` damps the oscillation towards the maximally
//! mixed state:
//!
//! ```text
//! P(0 | ω; t) = e^(−t/T)·cos²(ωt/2) + (1 − e^(−t/T))/2
//! ```
//!
//! Both are evaluated through the equivalent form `P(0) = (1 + D·cos ωt)/2`
//! with visibility `D = e^(−t/T)` (`D = 1` without decoherence), which keeps
//! `P(0) + P(1) = 1` to rounding.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smc::ExperimentRecord;

/// Above this magnitude ωt is reduced modulo 2π with an error-free product.
const PHASE_REDUCTION_THRESHOLD: f64 = 1e8;

/// Low-order part of 2π, `TAU_LO = 2π − TAU` in exact arithmetic.
const TAU_LO: f64 = 2.449_293_598_294_706_4e-16;

/// A single-shot measurement outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    /// The outcome corresponding to the initial state.
    Zero,
    One,
}

impl Outcome {
    pub fn from_bit(bit: u8) -> Result<Self> {
        match bit {
            0 => Ok(Outcome::Zero),
            1 => Ok(Outcome::One),
            other => Err(Error::Domain(format!("outcome must be 0 or 1, got {other}"))),
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Outcome::Zero => 0,
            Outcome::One => 1,
        }
    }
}

/// Precession likelihood, optionally damped by a finite coherence time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LikelihoodModel {
    coherence_time: Option<f64>,
}

impl LikelihoodModel {
    /// Ideal (decoherence-free) dynamics.
    pub const fn ideal() -> Self {
        Self { coherence_time: None }
    }

    pub fn with_coherence_time(coherence_time: f64) -> Result<Self> {
        if !(coherence_time.is_finite() && coherence_time > 0.0) {
            return Err(Error::Config(format!(
                "coherence time must be positive and finite, got {coherence_time}"
            )));
        }
        Ok(Self { coherence_time: Some(coherence_time) })
    }

    /// Builds a model from an optional coherence time.
    pub fn new(coherence_time: Option<f64>) -> Result<Self> {
        match coherence_time {
            Some(t) => Self::with_coherence_time(t),
            None => Ok(Self::ideal()),
        }
    }

    pub fn coherence_time(&self) -> Option<f64> {
        self.coherence_time
    }

    /// Oscillation contrast `e^(−t/T)`, or `1` for the ideal model.
    #[inline]
    pub fn visibility(&self, t: f64) -> f64 {
        match self.coherence_time {
            Some(tc) => (-t / tc).exp(),
            None => 1.0,
        }
    }

    /// `P(1 | ω; t)` without argument validation. Used by the inner loops.
    #[inline]
    pub fn prob_one(&self, omega: f64, t: f64) -> f64 {
        0.5 * (1.0 - self.visibility(t) * reduced_phase(omega, t).cos())
    }

    /// `P(0 | ω; t)` and `P(1 | ω; t)` for a visibility computed once per time.
    #[inline]
    pub(crate) fn outcome_probs(visibility: f64, omega: f64, t: f64) -> (f64, f64) {
        let c = visibility * reduced_phase(omega, t).cos();
        (0.5 * (1.0 + c), 0.5 * (1.0 - c))
    }

    /// Probability of outcome `x` at frequency `omega` after evolving for `t`.
    pub fn likelihood(&self, x: Outcome, omega: f64, t: f64) -> Result<f64> {
        check_arguments(omega, t)?;
        let (p0, p1) = Self::outcome_probs(self.visibility(t), omega, t);
        Ok(match x {
            Outcome::Zero => p0,
            Outcome::One => p1,
        })
    }

    /// Log-probability of a binomially aggregated record (without the
    /// binomial coefficient, which does not depend on ω).
    ///
    /// Returns `-inf` when an outcome with nonzero count has probability zero.
    pub fn log_likelihood_of_record(&self, omega: f64, record: &ExperimentRecord) -> Result<f64> {
        check_arguments(omega, record.time)?;
        Ok(self.record_log_likelihood(omega, record))
    }

    #[inline]
    pub(crate) fn record_log_likelihood(&self, omega: f64, record: &ExperimentRecord) -> f64 {
        let (p0, p1) = Self::outcome_probs(self.visibility(record.time), omega, record.time);
        count_log(record.ones, p1) + count_log(record.shots - record.ones, p0)
    }
}

/// `n·ln p` with the convention `0·ln 0 = 0`.
#[inline]
fn count_log(n: u32, p: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        f64::from(n) * p.ln()
    }
}

fn check_arguments(omega: f64, t: f64) -> Result<()> {
    if !omega.is_finite() || !t.is_finite() {
        return Err(Error::Domain(format!("non-finite argument: omega={omega}, t={t}")));
    }
    if omega < 0.0 || t < 0.0 {
        return Err(Error::Domain(format!("negative argument: omega={omega}, t={t}")));
    }
    Ok(())
}

/// Returns ωt, reduced modulo 2π in extended precision once it is large
/// enough for the plain product to lose phase accuracy.
#[inline]
pub fn reduced_phase(omega: f64, t: f64) -> f64 {
    let hi = omega * t;
    if hi.abs() <= PHASE_REDUCTION_THRESHOLD {
        return hi;
    }
    // hi + lo == omega * t exactly
    let lo = omega.mul_add(t, -hi);
    let k = (hi / TAU).round();
    let r = (-k).mul_add(TAU, hi);
    (-k).mul_add(TAU_LO, r) + lo
}
