//! Closed-form classical processing cost per strategy, in elementary
//! operations.
//!
//! With `K` particles, one Bayesian update costs `C1 = K` and one
//! expectation costs `C2 = 3K`. Scoring one hypothetical outcome of one
//! control costs `C1 + 2·C2 = 7K`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strategy::StrategyKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    /// Particle count.
    pub k: u64,
    /// Candidate controls per optimization.
    pub m: u64,
    /// Number of single-shot experiments.
    pub n: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// Pre-determined controls: inference only.
    NonOptimized,
    /// Joint optimization of all `N` controls over `2^N` outcome scenarios.
    Global,
    /// One control at a time over two scenarios.
    Greedy,
    Wes,
    Awes,
    Sh,
    Pgh,
    Rts,
}

impl CostKind {
    pub const ALL: [CostKind; 8] = [
        CostKind::NonOptimized,
        CostKind::Global,
        CostKind::Greedy,
        CostKind::Wes,
        CostKind::Awes,
        CostKind::Sh,
        CostKind::Pgh,
        CostKind::Rts,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CostKind::NonOptimized => "non_optimized",
            CostKind::Global => "global",
            CostKind::Greedy => "greedy",
            CostKind::Wes => "wes",
            CostKind::Awes => "awes",
            CostKind::Sh => "sh",
            CostKind::Pgh => "pgh",
            CostKind::Rts => "rts",
        }
    }
}

impl From<StrategyKind> for CostKind {
    fn from(kind: StrategyKind) -> Self {
        match kind {
            StrategyKind::Wes => CostKind::Wes,
            StrategyKind::Awes => CostKind::Awes,
            StrategyKind::Sh => CostKind::Sh,
            StrategyKind::Pgh => CostKind::Pgh,
            StrategyKind::Rts => CostKind::Rts,
        }
    }
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        CostKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy kind '{s}' for cost model")))
    }
}

impl CostModel {
    pub fn new(k: u64, m: u64, n: u64) -> Result<Self> {
        if k == 0 || m == 0 || n == 0 {
            return Err(Error::Config(format!("K, M and N must be positive (K={k}, M={m}, N={n})")));
        }
        Ok(Self { k, m, n })
    }

    /// Cost of one Bayesian update.
    pub fn c1(&self) -> u128 {
        u128::from(self.k)
    }

    /// Cost of one expectation (weight, sum, normalize).
    pub fn c2(&self) -> u128 {
        3 * u128::from(self.k)
    }

    /// Cost of scoring one outcome scenario of one control: `C1 + 2·C2`.
    pub fn scenario_cost(&self) -> u128 {
        self.c1() + 2 * self.c2()
    }

    /// Total cost of `kind` over `N` experiments.
    pub fn predicted_cost(&self, kind: CostKind) -> Result<u128> {
        let k = u128::from(self.k);
        let m = u128::from(self.m);
        let n = u128::from(self.n);
        let overflow = || Error::Overflow(format!("{kind} cost for K={}, M={}, N={}", self.k, self.m, self.n));
        match kind {
            CostKind::NonOptimized | CostKind::Pgh | CostKind::Rts => n.checked_mul(k).ok_or_else(overflow),
            CostKind::Global => {
                let exp = u32::try_from(self.n).map_err(|_| overflow())?;
                let scenarios = 2u128.checked_pow(exp).ok_or_else(overflow)?;
                7u128
                    .checked_mul(m)
                    .and_then(|v| v.checked_mul(scenarios))
                    .and_then(|v| v.checked_add(n))
                    .and_then(|v| v.checked_mul(k))
                    .ok_or_else(overflow)
            }
            CostKind::Greedy => (14 * m + 1).checked_mul(n).and_then(|v| v.checked_mul(k)).ok_or_else(overflow),
            // 50 fixed candidates, ten shots per optimized time.
            CostKind::Wes | CostKind::Awes => 71u128.checked_mul(n).and_then(|v| v.checked_mul(k)).ok_or_else(overflow),
            CostKind::Sh => 4u128.checked_mul(n).and_then(|v| v.checked_mul(k)).ok_or_else(overflow),
        }
    }

    /// Every kind with its predicted cost, or the overflow message.
    pub fn table(&self) -> Vec<(CostKind, Result<u128>)> {
        CostKind::ALL.into_iter().map(|k| (k, self.predicted_cost(k))).collect()
    }
}
