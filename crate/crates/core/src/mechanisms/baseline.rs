use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{lm_mechanism, learning_max_value, Abort, Branch, ConstantsProfile, DynkinTrace, MechanismRun, MechanismState, MediumTrace, Period};
use crate::arrival::ArrivalStream;
use crate::error::Result;
use crate::instance::{LowerBoundDistribution, Market, Responder};

/// Offers `f_S(b)·B/t̂` to every remaining agent until the stream or the
/// budget runs out. Offers above the remaining budget are skipped.
pub fn linear_pricing(state: &mut MechanismState<'_>, threshold: f64) {
    let budget = state.budget();
    while state.budget_remaining() > 0.0 {
        let Some(agent) = state.next_agent() else { break };
        let price = state.marginal(agent) * budget / threshold;
        if price <= state.budget_remaining() {
            state.offer(agent, price, threshold);
        }
    }
}

/// Linear pricing at a fixed threshold over a given arrival order.
pub fn linear_pricing_fixed(
    market: &Market,
    responder: &dyn Responder,
    stream: ArrivalStream,
    threshold: f64,
) -> MechanismRun {
    let mut state = MechanismState::new(market, responder, stream);
    linear_pricing(&mut state, threshold);
    state.into_run(Branch::FixedThreshold, None)
}

/// Mean value of one fixed price over the lower-bound distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundRow {
    /// The price is `B / 2^index`.
    pub index: u32,
    pub price: f64,
    pub mean_value: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundTable {
    pub n: usize,
    pub budget: f64,
    pub trials: usize,
    /// Closed-form `E[OPT]`.
    pub expected_opt: f64,
    /// Sample mean of OPT over the drawn instances.
    pub empirical_opt: f64,
    pub rows: Vec<LowerBoundRow>,
}

impl LowerBoundTable {
    pub fn row(&self, index: u32) -> Option<&LowerBoundRow> {
        self.rows.iter().find(|r| r.index == index)
    }
}

/// How trial instances are drawn from the lower-bound distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Independent draws.
    #[default]
    Independent,
    /// Trial `t` of `T` uses a uniform from `[t/T, (t+1)/T)`. Every draw is
    /// still distributed exactly as the distribution, but rare instances are
    /// hit at their expected rate, which removes most of the variance of the
    /// high-price columns.
    Stratified,
}

/// Runs every non-adaptive price `B/2^i`, `i = 0..=log n`, against instances
/// drawn from the lower-bound distribution. Each trial draws one instance
/// and one arrival order shared by all prices.
pub fn non_adaptive_experiment<R: Rng + ?Sized>(
    n: usize,
    budget: f64,
    trials: usize,
    sampling: Sampling,
    rng: &mut R,
) -> Result<LowerBoundTable> {
    let dist = LowerBoundDistribution::new(n, budget)?;
    let log_n = dist.log_n();
    let support = (0..=log_n).map(|i| dist.instance(i)).collect::<Result<Vec<_>>>()?;
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(trials); support.len()];
    let mut opt_sum = 0.0;
    for trial in 0..trials {
        let drawn = match sampling {
            Sampling::Independent => dist.sample_index(rng),
            Sampling::Stratified => {
                let u = (trial as f64 + rng.random::<f64>()) / trials as f64;
                dist.index_from_unit(u)
            }
        } as usize;
        let instance = &support[drawn];
        opt_sum += f64::from(1u32 << drawn);
        let stream = ArrivalStream::random(n, rng);
        for (index, column) in values.iter_mut().enumerate() {
            let threshold = f64::from(1u32 << index);
            let mut state = MechanismState::new(instance.market(), instance.costs(), stream.clone())
                .without_rejection_log();
            linear_pricing(&mut state, threshold);
            column.push(state.value());
        }
    }
    let rows = values
        .iter()
        .enumerate()
        .map(|(index, column)| {
            let count = column.len() as f64;
            let mean = column.iter().sum::<f64>() / count;
            let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0).max(1.0);
            LowerBoundRow {
                index: index as u32,
                price: budget / f64::from(1u32 << index),
                mean_value: mean,
                std_error: (var / count).sqrt(),
            }
        })
        .collect();
    Ok(LowerBoundTable {
        n,
        budget,
        trials,
        expected_opt: dist.expected_opt(),
        empirical_opt: opt_sum / trials as f64,
        rows,
    })
}

/// Secretary rule: watch the first `⌊n/e⌋` agents, then offer the whole
/// budget to the first agent worth more on its own than all of them.
pub fn dynkin<R: Rng + ?Sized>(market: &Market, responder: &dyn Responder, rng: &mut R) -> MechanismRun {
    let stream = ArrivalStream::random(market.n(), rng);
    dynkin_on(market, responder, stream)
}

pub(crate) fn dynkin_on(market: &Market, responder: &dyn Responder, stream: ArrivalStream) -> MechanismRun {
    let sample_size = (market.n() as f64 / std::f64::consts::E).floor() as usize;
    let mut state = MechanismState::new(market, responder, stream);
    state.set_period(Period::Dynkin);
    state.observe(sample_size);
    let best = state.max_observed();
    let mut offered = None;
    while let Some(agent) = state.next_agent() {
        let value = state.singleton(agent);
        if value > best {
            // Price B for marginal value f({b}) is linear pricing at t̂ = f({b}).
            state.offer(agent, state.budget_remaining(), value);
            offered = Some(agent);
            break;
        }
    }
    let mut run = state.into_run(Branch::Dynkin, None);
    run.dynkin = Some(DynkinTrace { sample_size, offered });
    run
}

/// Learns `vmax`, then runs linear pricing at `2^e·vmax` for a uniformly
/// random exponent `e` in the profile's range.
pub fn medium_market<R: Rng + ?Sized>(
    market: &Market,
    responder: &dyn Responder,
    profile: &ConstantsProfile,
    rng: &mut R,
) -> MechanismRun {
    let stream = ArrivalStream::random(market.n(), rng);
    let mut state = MechanismState::new(market, responder, stream);
    let mut trace = MediumTrace::default();
    state.set_period(Period::Learning);
    let abort = match learning_max_value(&mut state, rng) {
        Err(abort) => Some(abort),
        Ok(learned) if learned.estimate <= 0.0 => {
            trace.vmax_estimate = Some(learned.estimate);
            Some(Abort::ZeroValueEstimate)
        }
        Ok(learned) => {
            let (lo, hi) = profile.medium_exponents;
            let exponent = rng.random_range(lo..=hi);
            let threshold = f64::from(exponent).exp2() * learned.estimate;
            trace = MediumTrace {
                vmax_estimate: Some(learned.estimate),
                exponent: Some(exponent),
                threshold: Some(threshold),
            };
            state.set_period(Period::Fixed);
            linear_pricing(&mut state, threshold);
            None
        }
    };
    let mut run = state.into_run(Branch::MediumMarket, abort);
    run.medium = Some(trace);
    run
}

/// Runs Dynkin, the medium-market rule or the LM mechanism with the
/// profile's branch probabilities.
pub fn posted_prices<R: Rng + ?Sized>(
    market: &Market,
    responder: &dyn Responder,
    profile: &ConstantsProfile,
    rng: &mut R,
) -> MechanismRun {
    let [p_dynkin, p_medium, _] = profile.wrapper_probs;
    let u: f64 = rng.random();
    if u < p_dynkin {
        dynkin(market, responder, rng)
    } else if u < p_dynkin + p_medium {
        medium_market(market, responder, profile, rng)
    } else {
        lm_mechanism(market, responder, profile, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::Instance;
    use crate::rng::trial_rng;
    use crate::valuation::Valuation;

    fn uniform(k: usize, budget: f64) -> Instance {
        Instance::new(Valuation::additive(vec![1.0; k]).unwrap(), vec![budget / k as f64; k], budget).unwrap()
    }

    #[test]
    fn threshold_bound_on_uniform_family() {
        let inst = uniform(100, 1.0);
        let opt = 100.0;
        for h in [0.25, 0.5, 0.75] {
            let run = linear_pricing_fixed(inst.market(), inst.costs(), ArrivalStream::from_order((0..100).collect()), h * opt);
            let bound = ((1.0 - h).min(h - 0.01)) * opt;
            assert!(run.value >= bound, "h = {h}: {} < {bound}", run.value);
            assert!(run.payments <= 1.0);
        }
        let half = linear_pricing_fixed(inst.market(), inst.costs(), ArrivalStream::from_order((0..100).collect()), 50.0);
        assert!(half.value >= 49.0);
    }

    #[test]
    fn overestimate_buys_nothing() {
        let inst = uniform(100, 1.0);
        let run = linear_pricing_fixed(inst.market(), inst.costs(), ArrivalStream::from_order((0..100).collect()), 110.0);
        assert_eq!(run.value, 0.0);
        assert_eq!(run.ledger.len(), 100);
    }

    #[test]
    fn lower_bound_small_n() {
        let table = non_adaptive_experiment(8, 1.0, 20_000, Sampling::Independent, &mut trial_rng(3, 0)).unwrap();
        assert_eq!(table.expected_opt, 2.5);
        assert_eq!(table.rows.len(), 4);
        for row in &table.rows {
            assert!((row.mean_value - 1.0).abs() < 6.0 * row.std_error + 1e-9, "{row:?}");
        }
        // Price B/1 buys exactly one agent on every instance.
        assert_eq!(table.row(0).unwrap().mean_value, 1.0);
    }

    #[test]
    fn stratified_draws_hit_expected_counts() {
        let table = non_adaptive_experiment(8, 1.0, 8000, Sampling::Stratified, &mut trial_rng(4, 0)).unwrap();
        // Exactly 1000 strata fall on I_3, so the top price averages 8·1000/8000.
        assert_eq!(table.row(3).unwrap().mean_value, 1.0);
        assert_eq!(table.empirical_opt, 2.5);
    }

    #[test]
    fn dynkin_two_agents() {
        let inst = Instance::new(Valuation::additive(vec![1.0, 2.0]).unwrap(), vec![0.0; 2], 1.0).unwrap();
        let first = dynkin_on(inst.market(), inst.costs(), ArrivalStream::from_order(vec![0, 1]));
        assert_eq!(first.value, 1.0);
        assert_eq!(first.dynkin.as_ref().unwrap().sample_size, 0);
        let second = dynkin_on(inst.market(), inst.costs(), ArrivalStream::from_order(vec![1, 0]));
        assert_eq!(second.value, 2.0);
        assert_eq!(second.ledger[0].price, 1.0);
    }

    #[test]
    fn dynkin_misses_when_max_is_sampled() {
        let inst = Instance::new(Valuation::additive(vec![5.0, 1.0, 2.0, 3.0]).unwrap(), vec![0.0; 4], 1.0).unwrap();
        let run = dynkin_on(inst.market(), inst.costs(), ArrivalStream::from_order(vec![0, 1, 2, 3]));
        assert_eq!(run.value, 0.0);
        assert!(run.ledger.is_empty());
    }

    #[test]
    fn medium_market_threshold_in_range() {
        let inst = uniform(4096, 1.0);
        let profile = ConstantsProfile::default();
        for seed in 0..20 {
            let run = medium_market(inst.market(), inst.costs(), &profile, &mut trial_rng(seed, 0));
            let trace = run.medium.unwrap();
            let e = trace.exponent.unwrap();
            assert!((6..=23).contains(&e));
            assert_eq!(trace.threshold.unwrap(), f64::from(e).exp2());
            assert!(run.payments <= 1.0);
        }
    }

    #[test]
    fn dyadic_window_has_one_exponent() {
        // OPT = 2^12·vmax: only e = 8 satisfies OPT/16 <= 2^e < OPT/8.
        let opt = 4096.0;
        let hits: Vec<i32> = (6..=23).filter(|&e| {
            let t = f64::from(e).exp2();
            t >= opt / 16.0 && t < opt / 8.0
        }).collect();
        assert_eq!(hits, vec![8]);
    }
}
