use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    Abort, Branch, ConstantsProfile, IntervalPair, LiveRunner, LmTrace, MechanismRun, MechanismState, Period,
    PhaseRunner,
};
use crate::arrival::{binomial, ArrivalStream, PhaseSpec};
use crate::error::{Error, Result};
use crate::instance::{Market, Responder};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VmaxLearning {
    pub estimate: f64,
    pub observed: usize,
    /// No agent was sampled, so the first arriving agent was used instead.
    pub fallback: bool,
}

/// Observes a `Binomial(remaining, 1/3)` prefix of the stream without making
/// offers and returns the largest singleton value seen.
pub fn learning_max_value<R: Rng + ?Sized>(
    state: &mut MechanismState<'_>,
    rng: &mut R,
) -> Result<VmaxLearning, Abort> {
    let remaining = state.stream().remaining();
    if remaining == 0 {
        return Err(Abort::StreamExhausted);
    }
    let sampled = binomial(remaining, 1.0 / 3.0, rng);
    let agents = state.observe(sampled.max(1));
    let estimate = agents.iter().map(|&a| state.singleton(a)).fold(0.0, f64::max);
    Ok(VmaxLearning {
        estimate,
        observed: agents.len(),
        fallback: sampled == 0,
    })
}

/// Threshold sequence `t_1 = vmax`, `t_2 = tower_base·vmax`,
/// `t_i = 2^(t_{i-1}/vmax)·t_{i-1}`, cut at the first `t_i ≥ n·vmax`, which is
/// replaced by `n·vmax`.
///
/// Indices are 1-based to match `t_1, …, t_{T+1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerTower {
    vmax: f64,
    endpoints: Vec<f64>,
    /// `log2(t_i / vmax)`; the recurrence is run in this space so it never
    /// overflows before truncation.
    log_ratios: Vec<f64>,
}

impl PowerTower {
    pub fn build(vmax: f64, n: usize, profile: &ConstantsProfile) -> Result<Self> {
        if !(vmax.is_finite() && vmax > 0.0) {
            return Err(Error::invalid(format!("tower needs a positive vmax, got {vmax}")));
        }
        if n < 2 {
            return Err(Error::invalid("tower needs at least two agents"));
        }
        let top = (n as f64).log2();
        let mut tower = PowerTower {
            vmax,
            endpoints: vec![vmax],
            log_ratios: vec![0.0],
        };
        let base = profile.tower_base.log2();
        if base >= top {
            tower.push_top(n, top);
            return Ok(tower);
        }
        tower.endpoints.push(profile.tower_base * vmax);
        tower.log_ratios.push(base);
        loop {
            let prev = *tower.log_ratios.last().expect("non-empty");
            let next = prev + prev.exp2();
            if next >= top {
                tower.push_top(n, top);
                return Ok(tower);
            }
            tower.endpoints.push(vmax * next.exp2());
            tower.log_ratios.push(next);
        }
    }

    fn push_top(&mut self, n: usize, top: f64) {
        self.endpoints.push(n as f64 * self.vmax);
        self.log_ratios.push(top);
    }

    pub fn vmax(&self) -> f64 {
        self.vmax
    }

    /// `t_1, …, t_{T+1}`.
    pub fn endpoints(&self) -> &[f64] {
        &self.endpoints
    }

    /// Number of intervals `T`.
    pub fn interval_count(&self) -> usize {
        self.endpoints.len() - 1
    }

    pub fn threshold(&self, index: usize) -> f64 {
        self.endpoints[index - 1]
    }

    pub fn log_ratio(&self, index: usize) -> f64 {
        self.log_ratios[index - 1]
    }

    /// Test phase for threshold `t_index`.
    pub fn phase(&self, index: usize, profile: &ConstantsProfile) -> PhaseSpec {
        let log_ratio = self.log_ratio(index);
        PhaseSpec {
            rounds: ((profile.phase_len_coeff * log_ratio).ceil() as usize).max(1),
            length_param: profile.goodness_coeff * (-log_ratio).exp2(),
            threshold: self.threshold(index),
        }
    }

    /// Interval `(t_lo, t_{lo+1}]`; the first one is closed below.
    pub fn interval(&self, lo: usize) -> IntervalPair {
        IntervalPair::new(self.threshold(lo), self.threshold(lo + 1), lo == 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerChoice {
    /// Index of the last successful phase, 1 if none succeeded.
    pub hit_index: usize,
    pub lower: IntervalPair,
    pub upper: IntervalPair,
    pub took_upper: bool,
    pub chosen: IntervalPair,
}

/// Tests `t_2, …, t_T`, keeps the last hit and returns one of the two
/// intervals around it chosen by a fair coin.
pub fn power_tower_search(
    runner: &mut impl PhaseRunner,
    tower: &PowerTower,
    profile: &ConstantsProfile,
) -> Result<TowerChoice, Abort> {
    let mut hit_index = 1;
    for index in 2..=tower.interval_count() {
        if runner.run_phase(tower.phase(index, profile))? {
            hit_index = index;
        }
    }
    let lower = tower.interval(hit_index.saturating_sub(1).max(1));
    let upper = tower.interval(hit_index.min(tower.interval_count()));
    let took_upper = runner.coin();
    Ok(TowerChoice {
        hit_index,
        lower,
        upper,
        took_upper,
        chosen: if took_upper { upper } else { lower },
    })
}

/// Phase layout shared by binary search and exploitation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSchedule {
    /// `L = ⌈log2 log2(t_max/t_min)⌉`, at least 1.
    pub phases: usize,
    /// `m = ⌈bs_phase_coeff · log2 log2(t_max/t_min)⌉`, at least 1.
    pub phase_len: usize,
    /// `a = 1/(bs_len_denom · L · m)`.
    pub length_param: f64,
    /// Binary search ranges over exponents `0..=top_exponent`.
    pub top_exponent: u32,
}

impl SearchSchedule {
    /// Schedule for a range with `log2(t_max/t_min) = log_span`.
    pub fn from_log_span(log_span: f64, profile: &ConstantsProfile) -> Self {
        let loglog = if log_span > 1.0 { log_span.log2() } else { 0.0 };
        let phases = (loglog.ceil() as usize).max(1);
        let phase_len = ((profile.bs_phase_coeff * loglog).ceil() as usize).max(1);
        SearchSchedule {
            phases,
            phase_len,
            length_param: 1.0 / (profile.bs_len_denom * phases as f64 * phase_len as f64),
            top_exponent: log_span.max(0.0).ceil() as u32,
        }
    }

    pub fn for_pair(pair: &IntervalPair, profile: &ConstantsProfile) -> Self {
        Self::from_log_span((pair.t_max / pair.t_min).log2(), profile)
    }

    /// `ℓ = L · m`.
    pub fn total_rounds(&self) -> usize {
        self.phases * self.phase_len
    }

    fn phase(&self, threshold: f64) -> PhaseSpec {
        PhaseSpec {
            rounds: self.phase_len,
            length_param: self.length_param,
            threshold,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub t_init: f64,
    pub exponent: u32,
    pub phases_run: usize,
}

/// Finds the largest exponent `e` whose threshold `2^e·t_min` hits, assuming
/// hits are monotone; exponent 0 is returned when nothing hits.
pub fn binary_search(
    runner: &mut impl PhaseRunner,
    pair: &IntervalPair,
    schedule: &SearchSchedule,
) -> Result<SearchOutcome, Abort> {
    let (mut low, mut high) = (0u32, schedule.top_exponent);
    let mut phases_run = 0;
    while low < high {
        let mid = (low + high).div_ceil(2);
        phases_run += 1;
        if runner.run_phase(schedule.phase(pair.t_min * f64::from(mid).exp2()))? {
            low = mid;
        } else {
            high = mid - 1;
        }
    }
    Ok(SearchOutcome {
        t_init: pair.t_min * f64::from(low).exp2(),
        exponent: low,
        phases_run,
    })
}

/// Runs `L` phases starting at `t_init`, doubling the threshold after a hit
/// and halving it after a miss. Returns the final threshold.
pub fn exploitation(
    runner: &mut impl PhaseRunner,
    t_init: f64,
    schedule: &SearchSchedule,
) -> Result<f64, Abort> {
    let mut threshold = t_init;
    for _ in 0..schedule.phases {
        threshold = if runner.run_phase(schedule.phase(threshold))? {
            threshold * 2.0
        } else {
            threshold / 2.0
        };
    }
    Ok(threshold)
}

/// Runs the four periods on `state`, filling `trace` as decisions are made.
pub fn run_lm_periods<R: Rng + ?Sized>(
    state: &mut MechanismState<'_>,
    profile: &ConstantsProfile,
    rng: &mut R,
    trace: &mut LmTrace,
) -> Result<(), Abort> {
    state.set_period(Period::Learning);
    let learned = learning_max_value(state, rng)?;
    trace.vmax_estimate = Some(learned.estimate);
    trace.observed = learned.observed;
    trace.fallback = learned.fallback;
    if learned.estimate <= 0.0 {
        return Err(Abort::ZeroValueEstimate);
    }
    let n = state.market().n();
    let tower = PowerTower::build(learned.estimate, n.max(2), profile).expect("estimate is positive");
    trace.tower = tower.endpoints().to_vec();

    let mut runner = LiveRunner {
        state,
        rng,
        profile,
        vmax_cap: Some(learned.estimate),
    };
    runner.state.set_period(Period::TowerSearch);
    let choice = power_tower_search(&mut runner, &tower, profile)?;
    trace.tower_hit_index = Some(choice.hit_index);
    trace.candidates = Some([choice.lower, choice.upper]);
    trace.chosen = Some(choice.chosen);

    let schedule = SearchSchedule::for_pair(&choice.chosen, profile);
    runner.state.set_period(Period::BinarySearch);
    let search = binary_search(&mut runner, &choice.chosen, &schedule)?;
    trace.t_init = Some(search.t_init);

    runner.state.set_period(Period::Exploitation);
    trace.t_final = Some(exploitation(&mut runner, search.t_init, &schedule)?);
    Ok(())
}

/// The LM mechanism on a fresh random arrival order.
pub fn lm_mechanism<R: Rng + ?Sized>(
    market: &Market,
    responder: &dyn Responder,
    profile: &ConstantsProfile,
    rng: &mut R,
) -> MechanismRun {
    let stream = ArrivalStream::random(market.n(), rng);
    let mut state = MechanismState::new(market, responder, stream);
    let mut trace = LmTrace::default();
    let abort = run_lm_periods(&mut state, profile, rng, &mut trace).err();
    let mut run = state.into_run(Branch::Lm, abort);
    run.lm = Some(trace);
    run
}
