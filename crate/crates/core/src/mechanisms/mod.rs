//! Posted-price mechanisms.
//!
//! Every mechanism runs against a [`Market`](crate::Market) (public) and a
//! [`Responder`](crate::Responder) (private costs behind an accept/reject
//! predicate) and returns a [`MechanismRun`] with the full offer ledger.

mod baseline;
mod lm;
mod state;
mod threshold;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prediction::WalkTrace;
use crate::valuation::AgentId;

pub use baseline::{
    dynkin, linear_pricing, linear_pricing_fixed, medium_market, non_adaptive_experiment,
    posted_prices, LowerBoundRow, LowerBoundTable, Sampling,
};
pub use lm::{
    binary_search, exploitation, learning_max_value, lm_mechanism, power_tower_search,
    run_lm_periods, PowerTower, SearchOutcome, SearchSchedule, TowerChoice, VmaxLearning,
};
pub use state::{MechanismState, OfferRecord, RoundLog, RoundSource};
pub use threshold::{test_threshold, LiveRunner, PhaseOutcome, PhaseRunner};

/// Numeric constants shared by all mechanisms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsProfile {
    pub name: String,
    /// Success constant `C`: a round succeeds when it collects `C·a·t̂`.
    pub c: f64,
    /// Large-market bar: guarantees are stated for `OPT > market_bar·vmax`.
    pub market_bar: f64,
    /// `t_2 / vmax` in the power tower.
    pub tower_base: f64,
    /// Length parameter of a tower phase is `goodness_coeff·vmax/t_i`.
    pub goodness_coeff: f64,
    /// Tower phase `i` has `⌈phase_len_coeff·log2(t_i/vmax)⌉` rounds.
    pub phase_len_coeff: f64,
    /// Binary-search phases have `⌈bs_phase_coeff·log2 log2(t_max/t_min)⌉` rounds.
    pub bs_phase_coeff: f64,
    /// Binary-search length parameter is `1/(bs_len_denom·L·m)`.
    pub bs_len_denom: f64,
    /// Probabilities of the Dynkin, medium-market and LM branches.
    pub wrapper_probs: [f64; 3],
    /// Inclusive exponent range of medium-market thresholds `2^e·vmax`.
    pub medium_exponents: (i32, i32),
    /// Skip offers that would overrun a round's share `3·C·a·B`.
    #[serde(default = "enabled")]
    pub enforce_round_budget: bool,
}

fn enabled() -> bool {
    true
}

impl Default for ConstantsProfile {
    fn default() -> Self {
        ConstantsProfile {
            name: "default".into(),
            c: 1.0 / (7.0 * std::f64::consts::E),
            market_bar: 1e7,
            tower_base: 1e7,
            goodness_coeff: 81.0 * std::f64::consts::E,
            phase_len_coeff: 1.5,
            bs_phase_coeff: 8.0,
            bs_len_denom: 6.0,
            wrapper_probs: [0.1, 0.1, 0.8],
            medium_exponents: (6, 23),
            enforce_round_budget: true,
        }
    }
}

impl ConstantsProfile {
    /// Scaled constants that exercise every period at `n ≤ 2^18`.
    pub fn desk() -> Self {
        ConstantsProfile {
            name: "desk".into(),
            market_bar: 16384.0,
            tower_base: 16384.0,
            goodness_coeff: 8.0 * std::f64::consts::E,
            ..ConstantsProfile::default()
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(ConstantsProfile::default()),
            "desk" => Ok(ConstantsProfile::desk()),
            other => Err(Error::invalid(format!("unknown profile {other:?} (expected default or desk)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c", self.c),
            ("market_bar", self.market_bar),
            ("tower_base", self.tower_base),
            ("goodness_coeff", self.goodness_coeff),
            ("phase_len_coeff", self.phase_len_coeff),
            ("bs_phase_coeff", self.bs_phase_coeff),
            ("bs_len_denom", self.bs_len_denom),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(format!("profile constant {name} = {v} must be positive")));
        }
        if self.tower_base <= self.goodness_coeff {
            return Err(Error::invalid("tower_base must exceed goodness_coeff so tower length parameters stay below 1"));
        }
        if self.wrapper_probs.iter().any(|p| !(0.0..=1.0).contains(p))
            || (self.wrapper_probs.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(Error::invalid("wrapper probabilities must be in [0, 1] and sum to 1"));
        }
        if self.medium_exponents.0 > self.medium_exponents.1 {
            return Err(Error::invalid("medium_exponents must be an increasing range"));
        }
        Ok(())
    }
}

/// Two consecutive tower endpoints bracketing the search for OPT.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalPair {
    pub t_min: f64,
    pub t_max: f64,
    /// The first tower interval includes its lower endpoint.
    pub closed_below: bool,
}

impl IntervalPair {
    pub fn new(t_min: f64, t_max: f64, closed_below: bool) -> Self {
        IntervalPair { t_min, t_max, closed_below }
    }

    /// Membership in `(t_min, t_max]`, or `[t_min, t_max]` when closed below.
    pub fn contains(&self, x: f64) -> bool {
        let above = if self.closed_below { x >= self.t_min } else { x > self.t_min };
        above && x <= self.t_max
    }
}

/// Which part of a mechanism produced an offer or round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Learning,
    TowerSearch,
    BinarySearch,
    Exploitation,
    Fixed,
    Dynkin,
    PredictionWalk,
    PredictionFallback,
}

impl Period {
    pub fn as_str(self) -> &'static str {
        match self {
            Period::Learning => "learning",
            Period::TowerSearch => "tower_search",
            Period::BinarySearch => "binary_search",
            Period::Exploitation => "exploitation",
            Period::Fixed => "fixed",
            Period::Dynkin => "dynkin",
            Period::PredictionWalk => "prediction_walk",
            Period::PredictionFallback => "prediction_fallback",
        }
    }
}

/// Mechanism that actually ran in a trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Lm,
    Dynkin,
    MediumMarket,
    Prediction,
    FixedThreshold,
}

/// Why a mechanism stopped early.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Abort {
    #[error("arrival stream exhausted")]
    StreamExhausted,
    #[error("agent {agent} is worth {value}, above the learned maximum")]
    ValueAboveVmax { agent: AgentId, value: f64 },
    #[error("budget depleted")]
    BudgetDepleted,
    #[error("pre-drawn rounds used up")]
    RoundsExhausted,
    #[error("every observed agent had zero value")]
    ZeroValueEstimate,
}

/// Everything the LM mechanism decided, for event accounting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LmTrace {
    pub vmax_estimate: Option<f64>,
    pub observed: usize,
    pub fallback: bool,
    pub tower: Vec<f64>,
    pub tower_hit_index: Option<usize>,
    pub candidates: Option<[IntervalPair; 2]>,
    pub chosen: Option<IntervalPair>,
    pub t_init: Option<f64>,
    pub t_final: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DynkinTrace {
    pub sample_size: usize,
    pub offered: Option<AgentId>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MediumTrace {
    pub vmax_estimate: Option<f64>,
    pub exponent: Option<i32>,
    pub threshold: Option<f64>,
}

/// Outcome of one mechanism run.
#[derive(Clone, Debug, PartialEq)]
pub struct MechanismRun {
    pub branch: Branch,
    pub value: f64,
    pub payments: f64,
    pub solution: Vec<AgentId>,
    pub ledger: Vec<OfferRecord>,
    pub rounds: Vec<RoundLog>,
    pub abort: Option<Abort>,
    pub consumed: usize,
    pub lm: Option<LmTrace>,
    pub dynkin: Option<DynkinTrace>,
    pub medium: Option<MediumTrace>,
    pub walk: Option<WalkTrace>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        ConstantsProfile::default().validate().unwrap();
        ConstantsProfile::desk().validate().unwrap();
        let mut bad = ConstantsProfile::desk();
        bad.wrapper_probs = [0.5, 0.5, 0.5];
        assert!(bad.validate().is_err());
        let bad = ConstantsProfile {
            c: -1.0,
            ..ConstantsProfile::default()
        };
        assert!(bad.validate().is_err());
        assert!(ConstantsProfile::by_name("laptop").is_err());
    }

    #[test]
    fn default_constants() {
        let p = ConstantsProfile::default();
        assert!((p.c - 1.0 / (7.0 * std::f64::consts::E)).abs() < 1e-15);
        assert_eq!(p.medium_exponents.1 - p.medium_exponents.0 + 1, 18);
    }

    #[test]
    fn interval_membership() {
        let first = IntervalPair::new(1.0, 8.0, true);
        assert!(first.contains(1.0) && first.contains(8.0) && !first.contains(8.5));
        let later = IntervalPair::new(8.0, 64.0, false);
        assert!(!later.contains(8.0) && later.contains(64.0));
    }
}
