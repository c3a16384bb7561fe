//! Posted-price mechanisms for online budget-feasible procurement.
//!
//! A buyer with budget `B` meets sellers one at a time, in uniformly random
//! order, and quotes each a take-it-or-leave-it price. Seller costs are
//! private: mechanisms only ever see accept/reject answers through
//! [`Responder`]. The crate contains the valuation oracles, instance
//! generators, offline optimum solvers, the round/phase arrival machinery,
//! the mechanisms themselves and a Monte Carlo harness that audits every
//! trial.

pub mod arrival;
pub mod error;
pub mod harness;
pub mod instance;
pub mod mechanisms;
pub mod offline_opt;
pub mod prediction;
pub mod rng;
pub mod valuation;

pub use arrival::{ArrivalStream, PhaseSpec, RoundPlan};
pub use error::{Error, Result};
pub use instance::{
    Agent, CostBook, CostModel, GeneratedInstance, Instance, LowerBoundDistribution, Market,
    MarketKind, Responder,
};
pub use mechanisms::{
    Abort, Branch, ConstantsProfile, IntervalPair, MechanismRun, MechanismState, OfferRecord,
    Period, PowerTower,
};
pub use offline_opt::{OptEstimate, OptKind};
pub use prediction::{PredictionConfig, WalkTrace};
pub use valuation::{AgentId, ValueTracker, Valuation};
