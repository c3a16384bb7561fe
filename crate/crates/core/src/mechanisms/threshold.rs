use rand::Rng;

use super::{Abort, ConstantsProfile, MechanismState, RoundLog};
use crate::arrival::{PhaseSpec, RoundPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhaseOutcome {
    pub hit: bool,
    pub successes: usize,
    pub rounds: usize,
}

/// Runs one phase of `spec.rounds` binomial rounds at threshold `t̂`.
///
/// Every agent of a round is offered the linear price `f_S(b)·B/t̂`, where
/// `B` is the full budget. Offers above what is left of the budget, or of the
/// round's share `3·C·a·B` when the profile enforces it, are skipped and the
/// round is marked price-capped.
/// A round succeeds when it collects at least `C·a·t̂`; the phase hits when
/// at least half of its rounds succeed.
///
/// Aborts when the stream runs dry, when an agent is worth more than
/// `vmax_cap` on its own, or when the budget reaches zero.
pub fn test_threshold<R: Rng + ?Sized>(
    state: &mut MechanismState<'_>,
    spec: PhaseSpec,
    vmax_cap: Option<f64>,
    profile: &ConstantsProfile,
    rng: &mut R,
) -> Result<PhaseOutcome, Abort> {
    debug_assert!(spec.threshold > 0.0 && spec.rounds >= 1);
    debug_assert!(spec.length_param > 0.0 && spec.length_param < 1.0);
    let budget = state.budget();
    let threshold = spec.threshold;
    let target = profile.c * spec.length_param * threshold;
    let round_budget = RoundPlan::budget_share(profile.c, spec.length_param, budget);
    let phase = state.begin_phase();
    let mut successes = 0;
    for _ in 0..spec.rounds {
        let agents = state.next_round(spec.length_param, rng)?;
        let mut log = RoundLog {
            period: state.period(),
            phase,
            round: state.current_round(),
            length_param: spec.length_param,
            threshold,
            agents,
            value: 0.0,
            success: false,
            price_capped: false,
        };
        let mut spent = 0.0;
        let mut abort = None;
        for &agent in &log.agents {
            if let Some(cap) = vmax_cap {
                let value = state.singleton(agent);
                if value > cap {
                    abort = Some(Abort::ValueAboveVmax { agent, value });
                    break;
                }
            }
            let gain = state.marginal(agent);
            let price = gain * budget / threshold;
            let room = if profile.enforce_round_budget {
                state.budget_remaining().min(round_budget - spent)
            } else {
                state.budget_remaining()
            };
            if price > room {
                log.price_capped = true;
                continue;
            }
            if state.offer(agent, price, threshold) {
                log.value += gain;
                spent += price;
                if state.budget_remaining() <= 0.0 {
                    abort = Some(Abort::BudgetDepleted);
                    break;
                }
            }
        }
        log.success = abort.is_none() && log.value >= target;
        successes += usize::from(log.success);
        state.log_round(log);
        if let Some(abort) = abort {
            return Err(abort);
        }
    }
    Ok(PhaseOutcome {
        hit: 2 * successes >= spec.rounds,
        successes,
        rounds: spec.rounds,
    })
}

/// Something that can run a test phase and flip a fair coin. The live
/// implementation is [`LiveRunner`]; tests script outcomes directly.
pub trait PhaseRunner {
    fn run_phase(&mut self, spec: PhaseSpec) -> Result<bool, Abort>;
    fn coin(&mut self) -> bool;
}

/// Runs phases with [`test_threshold`] against a live state.
pub struct LiveRunner<'a, 'm, R: Rng + ?Sized> {
    pub state: &'a mut MechanismState<'m>,
    pub rng: &'a mut R,
    pub profile: &'a ConstantsProfile,
    pub vmax_cap: Option<f64>,
}

impl<R: Rng + ?Sized> PhaseRunner for LiveRunner<'_, '_, R> {
    fn run_phase(&mut self, spec: PhaseSpec) -> Result<bool, Abort> {
        test_threshold(self.state, spec, self.vmax_cap, self.profile, self.rng).map(|o| o.hit)
    }

    fn coin(&mut self) -> bool {
        self.rng.random_bool(0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrival::ArrivalStream;
    use crate::instance::Instance;
    use crate::mechanisms::RoundSource;
    use crate::rng::trial_rng;
    use crate::valuation::Valuation;
    use std::collections::VecDeque;

    fn spec(rounds: usize, a: f64, t: f64) -> PhaseSpec {
        PhaseSpec {
            rounds,
            length_param: a,
            threshold: t,
        }
    }

    #[test]
    fn empty_round_fails() {
        let inst = Instance::new(Valuation::additive(vec![1.0; 3]).unwrap(), vec![0.0; 3], 1.0).unwrap();
        let mut state = MechanismState::new(inst.market(), inst.costs(), ArrivalStream::from_order(vec![0, 1, 2]))
            .with_round_source(RoundSource::Fixed(VecDeque::from([0])));
        let out = test_threshold(&mut state, spec(1, 0.1, 10.0), None, &ConstantsProfile::default(), &mut trial_rng(0, 0))
            .unwrap();
        assert!(!out.hit);
        assert!(state.ledger().is_empty());
        assert!(!state.rounds()[0].success);
    }

    #[test]
    fn ten_cheap_agents_succeed() {
        // 10 unit agents at cost B/100, a = 0.1, t̂ = 10, B = 1: each is offered
        // B/10 and accepts; 10 >= C·a·t̂ = 10/(7e).
        let inst = Instance::new(Valuation::additive(vec![1.0; 11]).unwrap(), vec![0.01; 11], 1.0).unwrap();
        let run = |profile: &ConstantsProfile| {
            let mut state = MechanismState::new(inst.market(), inst.costs(), ArrivalStream::from_order((0..11).collect()))
                .with_round_source(RoundSource::Fixed(VecDeque::from([10])));
            let out = test_threshold(&mut state, spec(1, 0.1, 10.0), None, profile, &mut trial_rng(0, 0));
            (out, state.into_run(crate::mechanisms::Branch::Lm, None))
        };

        let uncapped = ConstantsProfile {
            enforce_round_budget: false,
            ..ConstantsProfile::default()
        };
        let (out, state) = run(&uncapped);
        assert!(out.unwrap().hit);
        assert_eq!(state.value, 10.0);
        assert_eq!(state.ledger.len(), 10);
        assert!(state.ledger.iter().all(|r| r.accepted && r.price == 0.1));
        assert!(state.rounds[0].value >= 10.0 / (7.0 * std::f64::consts::E));

        // The round share 3·C·a·B ≈ 0.0158 is below one B/10 offer.
        let (out, state) = run(&ConstantsProfile::default());
        assert!(!out.unwrap().hit);
        assert!(state.rounds[0].price_capped);
        assert!(state.ledger.is_empty());
    }

    #[test]
    fn oversized_agent_aborts() {
        let inst = Instance::new(Valuation::additive(vec![1.0, 5.0, 1.0]).unwrap(), vec![0.0; 3], 1.0).unwrap();
        let mut state = MechanismState::new(inst.market(), inst.costs(), ArrivalStream::from_order(vec![0, 1, 2]))
            .with_round_source(RoundSource::Fixed(VecDeque::from([2])));
        let out = test_threshold(&mut state, spec(1, 0.5, 10.0), Some(1.0), &ConstantsProfile::default(), &mut trial_rng(0, 0));
        assert_eq!(out, Err(Abort::ValueAboveVmax { agent: 1, value: 5.0 }));
    }

    #[test]
    fn hit_needs_half_the_rounds() {
        let inst = Instance::new(Valuation::additive(vec![1.0; 6]).unwrap(), vec![0.0; 6], 1.0).unwrap();
        // Rounds of length 1, 0, 1, 0: two of four succeed. Price 0.001 fits
        // the round share 3·C·a·B ≈ 0.0016.
        let mut state = MechanismState::new(inst.market(), inst.costs(), ArrivalStream::from_order((0..6).collect()))
            .with_round_source(RoundSource::Fixed(VecDeque::from([1, 0, 1, 0])));
        let out = test_threshold(&mut state, spec(4, 0.01, 1000.0), None, &ConstantsProfile::default(), &mut trial_rng(0, 0))
            .unwrap();
        assert_eq!(out.successes, 2);
        assert!(out.hit);
    }
}
