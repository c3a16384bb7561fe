use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Abort, Branch, MechanismRun, Period};
use crate::arrival::{binomial, ArrivalStream};
use crate::instance::{Market, Responder};
use crate::valuation::{AgentId, ValueTracker};

/// One take-it-or-leave-it offer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfferRecord {
    pub period: Period,
    pub phase: u32,
    pub round: u32,
    pub agent: AgentId,
    /// Offered price; the payment is this when accepted and 0 otherwise.
    pub price: f64,
    /// Threshold `t̂` the price was derived from.
    pub threshold: f64,
    /// Marginal value of the agent with respect to the solution at offer time.
    pub marginal: f64,
    pub accepted: bool,
    pub budget_after: f64,
}

impl OfferRecord {
    pub fn payment(&self) -> f64 {
        if self.accepted {
            self.price
        } else {
            0.0
        }
    }
}

/// Summary of one round of a test phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub period: Period,
    pub phase: u32,
    pub round: u32,
    pub length_param: f64,
    pub threshold: f64,
    pub agents: Vec<AgentId>,
    /// Value collected in this round.
    pub value: f64,
    pub success: bool,
    /// Some agent was skipped because its price exceeded what was left.
    pub price_capped: bool,
}

/// How round lengths are chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum RoundSource {
    /// `Binomial(remaining, a)` drawn when the round starts.
    Binomial,
    /// Lengths fixed in advance; running out ends the mechanism.
    Fixed(VecDeque<usize>),
}

/// Per-trial mechanism state: solution, budget, stream and ledger.
pub struct MechanismState<'m> {
    market: &'m Market,
    responder: &'m dyn Responder,
    tracker: ValueTracker<'m>,
    stream: ArrivalStream,
    budget_remaining: f64,
    payments: f64,
    ledger: Vec<OfferRecord>,
    rounds: Vec<RoundLog>,
    source: RoundSource,
    record_rejections: bool,
    period: Period,
    phase: u32,
    round: u32,
    max_observed: f64,
}

impl<'m> MechanismState<'m> {
    pub fn new(market: &'m Market, responder: &'m dyn Responder, stream: ArrivalStream) -> Self {
        MechanismState {
            market,
            responder,
            tracker: market.valuation().tracker(),
            stream,
            budget_remaining: market.budget(),
            payments: 0.0,
            ledger: Vec::new(),
            rounds: Vec::new(),
            source: RoundSource::Binomial,
            record_rejections: true,
            period: Period::Fixed,
            phase: 0,
            round: 0,
            max_observed: 0.0,
        }
    }

    pub fn with_round_source(mut self, source: RoundSource) -> Self {
        self.source = source;
        self
    }

    /// Keep only accepted offers in the ledger (large Monte Carlo runs).
    pub fn without_rejection_log(mut self) -> Self {
        self.record_rejections = false;
        self
    }

    pub fn market(&self) -> &'m Market {
        self.market
    }

    pub fn budget(&self) -> f64 {
        self.market.budget()
    }

    pub fn budget_remaining(&self) -> f64 {
        self.budget_remaining
    }

    pub fn value(&self) -> f64 {
        self.tracker.value()
    }

    pub fn solution(&self) -> &[AgentId] {
        self.tracker.members()
    }

    pub fn stream(&self) -> &ArrivalStream {
        &self.stream
    }

    pub fn ledger(&self) -> &[OfferRecord] {
        &self.ledger
    }

    pub fn rounds(&self) -> &[RoundLog] {
        &self.rounds
    }

    pub fn period(&self) -> Period {
        self.period
    }

    pub fn set_period(&mut self, period: Period) {
        self.period = period;
    }

    /// Largest singleton value among agents seen so far.
    pub fn max_observed(&self) -> f64 {
        self.max_observed
    }

    pub fn singleton(&self, agent: AgentId) -> f64 {
        self.market.valuation().singleton(agent)
    }

    pub fn marginal(&self, agent: AgentId) -> f64 {
        self.tracker.marginal(agent)
    }

    /// Starts a new phase and returns its number.
    pub fn begin_phase(&mut self) -> u32 {
        self.phase += 1;
        self.phase
    }

    /// Consumes up to `count` agents without making offers.
    pub fn observe(&mut self, count: usize) -> Vec<AgentId> {
        let agents = self.stream.take(count).to_vec();
        self.note_seen(&agents);
        agents
    }

    /// Consumes the next agent.
    pub fn next_agent(&mut self) -> Option<AgentId> {
        let agent = self.stream.take(1).first().copied()?;
        self.note_seen(&[agent]);
        Some(agent)
    }

    fn note_seen(&mut self, agents: &[AgentId]) {
        let valuation = self.market.valuation();
        for &a in agents {
            self.max_observed = self.max_observed.max(valuation.singleton(a));
        }
    }

    /// Draws the next round. Fails if the stream is empty beforehand or is
    /// emptied by this round, or if fixed round lengths have run out.
    pub fn next_round<R: Rng + ?Sized>(&mut self, a: f64, rng: &mut R) -> Result<Vec<AgentId>, Abort> {
        if self.stream.is_exhausted() {
            return Err(Abort::StreamExhausted);
        }
        let len = match &mut self.source {
            RoundSource::Binomial => binomial(self.stream.remaining(), a, rng),
            RoundSource::Fixed(lengths) => lengths.pop_front().ok_or(Abort::RoundsExhausted)?,
        };
        self.round += 1;
        let agents = self.observe(len);
        if self.stream.is_exhausted() {
            return Err(Abort::StreamExhausted);
        }
        Ok(agents)
    }

    pub fn current_round(&self) -> u32 {
        self.round
    }

    pub fn log_round(&mut self, log: RoundLog) {
        self.rounds.push(log);
    }

    /// Makes an offer and returns whether it was accepted.
    ///
    /// # Panics
    ///
    /// If `price` exceeds the remaining budget or is not a finite
    /// non-negative number; callers must guard before offering.
    pub fn offer(&mut self, agent: AgentId, price: f64, threshold: f64) -> bool {
        assert!(
            price.is_finite() && price >= 0.0 && price <= self.budget_remaining,
            "offer of {price} with {} left",
            self.budget_remaining
        );
        let marginal = self.tracker.marginal(agent);
        let accepted = self.responder.accepts(agent, price);
        if accepted {
            self.tracker.insert(agent);
            self.budget_remaining -= price;
            self.payments += price;
        }
        if accepted || self.record_rejections {
            self.ledger.push(OfferRecord {
                period: self.period,
                phase: self.phase,
                round: self.round,
                agent,
                price,
                threshold,
                marginal,
                accepted,
                budget_after: self.budget_remaining,
            });
        }
        accepted
    }

    pub fn into_run(self, branch: Branch, abort: Option<Abort>) -> MechanismRun {
        MechanismRun {
            branch,
            value: self.tracker.value(),
            payments: self.payments,
            solution: self.tracker.members().to_vec(),
            ledger: self.ledger,
            rounds: self.rounds,
            abort,
            consumed: self.stream.consumed(),
            lm: None,
            dynkin: None,
            medium: None,
            walk: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::Instance;
    use crate::rng::trial_rng;
    use crate::valuation::Valuation;

    fn pair() -> Instance {
        Instance::new(Valuation::additive(vec![1.0, 1.0]).unwrap(), vec![0.0, 0.2], 1.0).unwrap()
    }

    #[test]
    fn offers_follow_cost_predicate() {
        let inst = pair();
        let mut state = MechanismState::new(inst.market(), inst.costs(), ArrivalStream::from_order(vec![0, 1]));
        assert!(state.offer(0, 0.0, 1.0));
        assert!(!state.offer(1, 0.1, 1.0));
        assert_eq!(state.value(), 1.0);
        assert_eq!(state.budget_remaining(), 1.0);
        let run = state.into_run(Branch::FixedThreshold, None);
        assert_eq!(run.ledger.len(), 2);
        assert_eq!(run.ledger[1].payment(), 0.0);
        assert_eq!(run.payments, 0.0);
    }

    #[test]
    #[should_panic]
    fn overspending_is_a_contract_violation() {
        let inst = pair();
        let mut state = MechanismState::new(inst.market(), inst.costs(), ArrivalStream::from_order(vec![0, 1]));
        state.offer(1, 1.5, 1.0);
    }

    #[test]
    fn fixed_round_lengths() {
        let inst = Instance::new(Valuation::additive(vec![1.0; 5]).unwrap(), vec![0.0; 5], 1.0).unwrap();
        let mut rng = trial_rng(0, 0);
        let mut state = MechanismState::new(inst.market(), inst.costs(), ArrivalStream::from_order(vec![4, 3, 2, 1, 0]))
            .with_round_source(RoundSource::Fixed(VecDeque::from([2, 0])));
        assert_eq!(state.next_round(0.5, &mut rng).unwrap(), vec![4, 3]);
        assert!(state.next_round(0.5, &mut rng).unwrap().is_empty());
        assert_eq!(state.next_round(0.5, &mut rng), Err(Abort::RoundsExhausted));
    }

    #[test]
    fn round_that_empties_the_stream_aborts() {
        let inst = pair();
        let mut rng = trial_rng(0, 0);
        let mut state = MechanismState::new(inst.market(), inst.costs(), ArrivalStream::from_order(vec![0, 1]))
            .with_round_source(RoundSource::Fixed(VecDeque::from([2])));
        assert_eq!(state.next_round(0.5, &mut rng), Err(Abort::StreamExhausted));
    }
}
