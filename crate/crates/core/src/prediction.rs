//! Threshold random walk seeded by a predicted optimum, with a binary-search
//! fallback.
//!
//! Phase A spends `ℓ` single-round tests starting at the predicted threshold,
//! doubling after a success and halving after a failure. Phase B restarts
//! from the largest value seen so far and searches `[d, n·d]` with the
//! remaining `ℓ` rounds. All `2ℓ` round lengths are drawn before the first
//! offer.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arrival::{binomial, ArrivalStream, PhaseSpec};
use crate::error::{Error, Result};
use crate::instance::{Market, Responder};
use crate::mechanisms::{
    binary_search, exploitation, test_threshold, Abort, Branch, ConstantsProfile, IntervalPair, LiveRunner,
    MechanismRun, MechanismState, Period, RoundSource, SearchSchedule,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionConfig {
    pub predicted_threshold: f64,
    /// `ℓ`: rounds in each of the two phases.
    pub rounds_per_phase: usize,
    pub length_param: f64,
}

impl PredictionConfig {
    /// `ℓ = ⌈log log n · log log log n⌉` and `a = 1/(6ℓ)`.
    pub fn with_defaults(predicted_threshold: f64, n: usize) -> Self {
        let loglog = (n.max(4) as f64).log2().log2();
        let product = loglog * loglog.max(2.0).log2();
        let rounds_per_phase = (product.ceil() as usize).max(1);
        PredictionConfig {
            predicted_threshold,
            rounds_per_phase,
            length_param: 1.0 / (6.0 * rounds_per_phase as f64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.predicted_threshold.is_finite() && self.predicted_threshold > 0.0) {
            return Err(Error::invalid("predicted threshold must be positive"));
        }
        if self.rounds_per_phase == 0 {
            return Err(Error::invalid("rounds_per_phase must be at least 1"));
        }
        if !(self.length_param > 0.0 && self.length_param < 1.0) {
            return Err(Error::invalid("length_param must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Phase A of one run. State `i` means threshold `2^-i·t̂`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WalkTrace {
    /// `states[j]` is the state before round `j`; one longer than `hits`.
    pub states: Vec<i32>,
    pub thresholds: Vec<f64>,
    pub hits: Vec<bool>,
    /// Some offer in the round was skipped for exceeding the budget left.
    pub price_capped: Vec<bool>,
}

impl WalkTrace {
    fn start(threshold: f64) -> Self {
        WalkTrace {
            states: vec![0],
            thresholds: vec![threshold],
            ..WalkTrace::default()
        }
    }

    fn step(&mut self, hit: bool, capped: bool) {
        let state = *self.states.last().expect("walk starts with a state");
        let threshold = *self.thresholds.last().expect("walk starts with a threshold");
        self.hits.push(hit);
        self.price_capped.push(capped);
        if hit {
            self.states.push(state - 1);
            self.thresholds.push(threshold * 2.0);
        } else {
            self.states.push(state + 1);
            self.thresholds.push(threshold / 2.0);
        }
    }

    /// Steps are `±1` and a hit always moves toward doubling.
    pub fn is_consistent(&self) -> bool {
        self.states.len() == self.hits.len() + 1
            && self.states.first() == Some(&0)
            && self
                .states
                .windows(2)
                .zip(&self.hits)
                .all(|(w, &hit)| w[1] - w[0] == if hit { -1 } else { 1 })
    }

    /// Rounds needed to first reach `target`, if it is ever reached.
    pub fn reach_time(&self, target: i32) -> Option<usize> {
        self.states.iter().position(|&s| s == target)
    }
}

/// Smallest integer `i` with `2^-i·t̂ ≤ OPT/7`.
pub fn i_star(predicted_threshold: f64, opt: f64) -> i32 {
    let target = opt / 7.0;
    let mut i = (predicted_threshold / target).log2().ceil() as i32;
    while predicted_threshold * (-f64::from(i)).exp2() > target {
        i += 1;
    }
    while predicted_threshold * (-f64::from(i - 1)).exp2() <= target {
        i -= 1;
    }
    i
}

/// Pre-draws `count` round lengths `n_j ~ Bin(n − Σ_{k<j} n_k, a)`.
pub fn predraw_rounds<R: Rng + ?Sized>(n: usize, count: usize, a: f64, rng: &mut R) -> VecDeque<usize> {
    let mut remaining = n;
    (0..count)
        .map(|_| {
            let len = binomial(remaining, a, rng);
            remaining -= len;
            len
        })
        .collect()
}

/// Runs the prediction mechanism on a fresh random arrival order.
pub fn prediction_mechanism<R: Rng + ?Sized>(
    market: &Market,
    responder: &dyn Responder,
    config: &PredictionConfig,
    profile: &ConstantsProfile,
    rng: &mut R,
) -> MechanismRun {
    let n = market.n();
    let stream = ArrivalStream::random(n, rng);
    let lengths = predraw_rounds(n, 2 * config.rounds_per_phase, config.length_param, rng);
    let mut state = MechanismState::new(market, responder, stream).with_round_source(RoundSource::Fixed(lengths));
    let mut walk = WalkTrace::start(config.predicted_threshold);
    let abort = run_phases(&mut state, config, profile, rng, &mut walk).err();
    let mut run = state.into_run(Branch::Prediction, abort);
    run.walk = Some(walk);
    run
}

fn run_phases<R: Rng + ?Sized>(
    state: &mut MechanismState<'_>,
    config: &PredictionConfig,
    profile: &ConstantsProfile,
    rng: &mut R,
    walk: &mut WalkTrace,
) -> Result<(), Abort> {
    state.set_period(Period::PredictionWalk);
    let mut threshold = config.predicted_threshold;
    for _ in 0..config.rounds_per_phase {
        let spec = PhaseSpec {
            rounds: 1,
            length_param: config.length_param,
            threshold,
        };
        let outcome = test_threshold(state, spec, None, profile, rng)?;
        let capped = state.rounds().last().is_some_and(|r| r.price_capped);
        walk.step(outcome.hit, capped);
        threshold = *walk.thresholds.last().expect("non-empty");
    }

    state.set_period(Period::PredictionFallback);
    if state.max_observed() <= 0.0 && state.next_agent().is_none() {
        return Err(Abort::StreamExhausted);
    }
    let d = state.max_observed();
    if d <= 0.0 {
        return Err(Abort::ZeroValueEstimate);
    }
    let n = state.market().n().max(2);
    let pair = IntervalPair::new(d, n as f64 * d, true);
    let shape = SearchSchedule::for_pair(&pair, profile);
    let search_phases = (f64::from(shape.top_exponent) + 1.0).log2().ceil() as usize;
    let schedule = SearchSchedule {
        phase_len: (config.rounds_per_phase / (search_phases + shape.phases)).max(1),
        length_param: config.length_param,
        ..shape
    };
    let mut runner = LiveRunner {
        state,
        rng,
        profile,
        vmax_cap: Some(d),
    };
    let fallback = binary_search(&mut runner, &pair, &schedule)
        .and_then(|found| exploitation(&mut runner, found.t_init, &schedule).map(|_| ()));
    match fallback {
        Err(Abort::RoundsExhausted) | Ok(()) => Ok(()),
        Err(abort) => Err(abort),
    }
}

/// How often walks reached `i*` quickly and kept returning to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkSummary {
    pub i_star: i32,
    pub walks: usize,
    /// `⌈|i*|/0.8⌉`.
    pub reach_bound: usize,
    /// Fraction of walks at `i*` within `reach_bound` rounds.
    pub reach_frequency: f64,
    /// Fraction of walks that, after first reaching `i*` with `r` rounds
    /// left, returned to it at least `⌊0.49·r⌋` times.
    pub return_frequency: f64,
}

pub fn walk_statistics(traces: &[WalkTrace], i_star: i32) -> WalkSummary {
    let reach_bound = (f64::from(i_star.unsigned_abs()) / 0.8).ceil() as usize;
    let mut reached = 0usize;
    let mut returned = 0usize;
    for trace in traces {
        let Some(first) = trace.reach_time(i_star) else { continue };
        reached += usize::from(first <= reach_bound);
        let left = trace.states.len() - 1 - first;
        let returns = trace.states[first + 1..].iter().filter(|&&s| s == i_star).count();
        returned += usize::from(returns >= (left as f64 * 0.49).floor() as usize);
    }
    let walks = traces.len().max(1) as f64;
    WalkSummary {
        i_star,
        walks: traces.len(),
        reach_bound,
        reach_frequency: reached as f64 / walks,
        return_frequency: returned as f64 / walks,
    }
}

/// Walk with fixed success probabilities: `p_low` in states `≥ i*`
/// (thresholds at most `OPT/7`) and `p_high` in states `< i*`.
pub fn idealized_walk<R: Rng + ?Sized>(i_star: i32, p_low: f64, p_high: f64, rounds: usize, rng: &mut R) -> WalkTrace {
    let mut trace = WalkTrace::start(1.0);
    for _ in 0..rounds {
        let state = *trace.states.last().expect("non-empty");
        let p = if state >= i_star { p_low } else { p_high };
        trace.step(rng.random_bool(p), false);
    }
    trace
}
