//! Random arrival order and the binomial round/phase partition of the stream.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::{ConstantsProfile, PowerTower};
use crate::valuation::AgentId;

/// Agents in arrival order with a cursor that only moves forward.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArrivalStream {
    order: Vec<AgentId>,
    cursor: usize,
}

/// The stream had no agents left when a round was requested.
#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("arrival stream exhausted")]
pub struct Exhausted;

impl ArrivalStream {
    /// Uniformly random permutation of `0..n`.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut order: Vec<AgentId> = (0..n).collect();
        order.shuffle(rng);
        ArrivalStream { order, cursor: 0 }
    }

    /// Fixed arrival order, for scripted runs.
    pub fn from_order(order: Vec<AgentId>) -> Self {
        ArrivalStream { order, cursor: 0 }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn remaining(&self) -> usize {
        self.order.len() - self.cursor
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining() == 0
    }

    pub fn consumed(&self) -> usize {
        self.cursor
    }

    pub fn order(&self) -> &[AgentId] {
        &self.order
    }

    /// Next agent, without consuming it.
    pub fn peek(&self) -> Option<AgentId> {
        self.order.get(self.cursor).copied()
    }

    /// Consumes the next `count` agents (fewer if the stream runs out).
    pub fn take(&mut self, count: usize) -> &[AgentId] {
        let start = self.cursor;
        self.cursor = (start + count).min(self.order.len());
        &self.order[start..self.cursor]
    }
}

/// `Binomial(trials, p)` sample.
pub fn binomial<R: Rng + ?Sized>(trials: usize, p: f64, rng: &mut R) -> usize {
    if trials == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return trials;
    }
    Binomial::new(trials as u64, p)
        .expect("p checked to lie in (0, 1)")
        .sample(rng) as usize
}

/// Draws a round of `Binomial(remaining, a)` agents.
pub fn draw_round<'s, R: Rng + ?Sized>(
    stream: &'s mut ArrivalStream,
    a: f64,
    rng: &mut R,
) -> Result<&'s [AgentId], Exhausted> {
    if stream.is_exhausted() {
        return Err(Exhausted);
    }
    let len = binomial(stream.remaining(), a, rng);
    Ok(stream.take(len))
}

/// Budget share `B_j = 3·C·a·B` of a round with length parameter `a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub length_param: f64,
    pub drawn_length: usize,
    pub budget_share: f64,
}

impl RoundPlan {
    pub fn budget_share(c: f64, a: f64, budget: f64) -> f64 {
        3.0 * c * a * budget
    }
}

/// `rounds` consecutive rounds sharing `(length_param, threshold)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub rounds: usize,
    pub length_param: f64,
    pub threshold: f64,
}

fn check_probabilities(params: &[f64]) -> Result<()> {
    if params.is_empty() {
        return Err(Error::invalid("round schedule is empty"));
    }
    if let Some(a) = params.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Error::invalid(format!("length parameter {a} outside (0, 1)")));
    }
    Ok(())
}

/// Probability that a fixed agent lands in the last round of the schedule:
/// `a_κ · Π_{i<κ} (1 − a_i)`.
pub fn participation_probability(params: &[f64]) -> Result<f64> {
    check_probabilities(params)?;
    let (last, earlier) = params.split_last().expect("non-empty");
    Ok(last * earlier.iter().map(|a| 1.0 - a).product::<f64>())
}

/// Monte Carlo estimate of how often fixed agents land in the last round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticipationEstimate {
    pub params: Vec<f64>,
    pub n: usize,
    pub trials: usize,
    /// Exact `q_κ`.
    pub theory: f64,
    /// Fraction of trials in which agent 0 was in round κ.
    pub single: f64,
    /// Fraction of trials in which agents 0 and 1 were both in round κ.
    pub joint: f64,
}

impl ParticipationEstimate {
    /// Standard deviation of the single-agent estimate under `q_κ`.
    pub fn single_sigma(&self) -> f64 {
        (self.theory * (1.0 - self.theory) / self.trials as f64).sqrt()
    }

    /// Standard deviation of the joint estimate under `q_κ²`.
    pub fn joint_sigma(&self) -> f64 {
        let q2 = self.theory * self.theory;
        (q2 * (1.0 - q2) / self.trials as f64).sqrt()
    }

    pub fn single_within(&self, sigmas: f64) -> bool {
        (self.single - self.theory).abs() <= sigmas * self.single_sigma()
    }

    pub fn joint_within(&self, sigmas: f64) -> bool {
        (self.joint - self.theory * self.theory).abs() <= sigmas * self.joint_sigma()
    }
}

/// Runs `trials` random permutations of `n` agents through the schedule and
/// records where agents 0 and 1 end up.
pub fn pairwise_joint_frequency<R: Rng + ?Sized>(
    params: &[f64],
    n: usize,
    trials: usize,
    rng: &mut R,
) -> Result<ParticipationEstimate> {
    let theory = participation_probability(params)?;
    if n < 2 || trials == 0 {
        return Err(Error::invalid("need at least two agents and one trial"));
    }
    let (mut single, mut joint) = (0usize, 0usize);
    for _ in 0..trials {
        let mut stream = ArrivalStream::random(n, rng);
        let mut last_round: &[AgentId] = &[];
        for &a in params {
            match draw_round(&mut stream, a, rng) {
                Ok(round) => last_round = round,
                Err(Exhausted) => {
                    last_round = &[];
                    break;
                }
            }
        }
        let has0 = last_round.contains(&0);
        let has1 = last_round.contains(&1);
        single += usize::from(has0);
        joint += usize::from(has0 && has1);
    }
    Ok(ParticipationEstimate {
        params: params.to_vec(),
        n,
        trials,
        theory,
        single: single as f64 / trials as f64,
        joint: joint as f64 / trials as f64,
    })
}

/// Per-index margin of the `a_i·γ_i ≤ i^-10` tower condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqBoundRow {
    pub index: usize,
    pub length_param: f64,
    pub phase_len: f64,
    pub product: f64,
    pub bound: f64,
}

impl SeqBoundRow {
    pub fn holds(&self) -> bool {
        self.product <= self.bound
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqBoundReport {
    pub rows: Vec<SeqBoundRow>,
}

impl SeqBoundReport {
    /// True when every row satisfies the bound (vacuously for short towers).
    pub fn holds(&self) -> bool {
        self.rows.iter().all(SeqBoundRow::holds)
    }
}

/// Checks `a_i·γ_i ≤ 1/i^10` for every tested tower threshold `i ≥ 2`,
/// with `a_i = goodness·vmax/t_i` and `γ_i = phase_len·log2(t_i/vmax)`.
pub fn check_seq_bound(tower: &PowerTower, profile: &ConstantsProfile) -> SeqBoundReport {
    let rows = (2..=tower.interval_count())
        .map(|index| {
            let log_ratio = tower.log_ratio(index);
            let length_param = profile.goodness_coeff * (-log_ratio).exp2();
            let phase_len = profile.phase_len_coeff * log_ratio;
            SeqBoundRow {
                index,
                length_param,
                phase_len,
                product: length_param * phase_len,
                bound: (index as f64).powi(-10),
            }
        })
        .collect();
    SeqBoundReport { rows }
}
