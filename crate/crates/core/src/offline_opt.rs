//! Offline optimum `max f(S)` subject to `Σ cost ≤ B`, used as the
//! denominator of competitive ratios.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::valuation::{AgentId, Valuation, ValueTracker};

/// Largest instance [`opt_exact`] accepts.
pub const EXACT_LIMIT: usize = 24;

/// Relative slack on the budget when testing offline feasibility. Costs such
/// as `B/100` are inexact in binary, so `100 · (B/100)` may exceed `B` by an
/// ulp.
pub const FEASIBILITY_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptKind {
    Exact,
    ClosedForm,
    GreedyLowerBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptEstimate {
    pub value: f64,
    pub kind: OptKind,
    pub certificate: Vec<AgentId>,
    /// Approximation factor guaranteed by the greedy estimator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guarantee: Option<f64>,
}

pub fn fits(spent: f64, cost: f64, budget: f64) -> bool {
    spent + cost <= budget * (1.0 + FEASIBILITY_SLACK)
}

pub fn is_feasible(costs: &[f64], set: &[AgentId], budget: f64) -> bool {
    fits(set.iter().map(|&i| costs[i]).sum(), 0.0, budget)
}

/// Exact optimum by branch and bound; at most [`EXACT_LIMIT`] agents.
pub fn opt_exact(instance: &Instance) -> Result<OptEstimate> {
    let n = instance.n();
    if n > EXACT_LIMIT {
        return Err(Error::TooLarge {
            solver: "opt_exact",
            n,
            limit: EXACT_LIMIT,
        });
    }
    let candidates: Vec<AgentId> = (0..n).collect();
    let (value, certificate) =
        exact_subset(instance.valuation(), instance.costs().as_slice(), &candidates, instance.budget());
    Ok(OptEstimate {
        value,
        kind: OptKind::Exact,
        certificate,
        guarantee: None,
    })
}

/// Exact optimum over `candidates` only. `costs` is indexed by agent id.
///
/// The bound at each node is the fractional knapsack over current marginals,
/// which dominates any completion by submodularity.
pub fn exact_subset(
    valuation: &Valuation,
    costs: &[f64],
    candidates: &[AgentId],
    budget: f64,
) -> (f64, Vec<AgentId>) {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| {
        ratio(valuation.singleton(b), costs[b])
            .total_cmp(&ratio(valuation.singleton(a), costs[a]))
            .then(a.cmp(&b))
    });
    let mut search = BranchAndBound {
        costs,
        order,
        limit: budget * (1.0 + FEASIBILITY_SLACK),
        best_value: 0.0,
        best_set: Vec::new(),
    };
    search.explore(0, &valuation.tracker(), 0.0);
    let mut best = search.best_set;
    best.sort_unstable();
    (search.best_value, best)
}

fn ratio(gain: f64, cost: f64) -> f64 {
    if cost > 0.0 {
        gain / cost
    } else if gain > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

struct BranchAndBound<'c> {
    costs: &'c [f64],
    order: Vec<AgentId>,
    limit: f64,
    best_value: f64,
    best_set: Vec<AgentId>,
}

impl BranchAndBound<'_> {
    fn explore(&mut self, depth: usize, tracker: &ValueTracker<'_>, spent: f64) {
        if tracker.value() > self.best_value {
            self.best_value = tracker.value();
            self.best_set = tracker.members().to_vec();
        }
        if depth == self.order.len() {
            return;
        }
        if tracker.value() + self.bound(depth, tracker, spent) <= self.best_value {
            return;
        }
        let agent = self.order[depth];
        let cost = self.costs[agent];
        if spent + cost <= self.limit && tracker.marginal(agent) > 0.0 {
            let mut with = tracker.clone();
            with.insert(agent);
            self.explore(depth + 1, &with, spent + cost);
        }
        self.explore(depth + 1, tracker, spent);
    }

    fn bound(&self, depth: usize, tracker: &ValueTracker<'_>, spent: f64) -> f64 {
        let mut items: Vec<(f64, f64)> = self.order[depth..]
            .iter()
            .map(|&a| (tracker.marginal(a), self.costs[a]))
            .filter(|&(gain, _)| gain > 0.0)
            .collect();
        items.sort_by(|x, y| ratio(y.0, y.1).total_cmp(&ratio(x.0, x.1)));
        let mut room = self.limit - spent;
        let mut total = 0.0;
        for (gain, cost) in items {
            if cost <= room {
                total += gain;
                room -= cost;
            } else {
                total += gain * room / cost;
                break;
            }
        }
        total
    }
}

/// Closed-form optimum for uniform-cost additive or concave instances:
/// buy the `min(n, ⌊B/c⌋)` most valuable agents.
pub fn opt_closed_form(instance: &Instance) -> Result<OptEstimate> {
    let costs = instance.costs().as_slice();
    let cost = costs[0];
    if costs.iter().any(|&c| c != cost) {
        return Err(Error::NotUniform("agents have different costs".into()));
    }
    let n = instance.n();
    let affordable = if cost > 0.0 {
        let m = (instance.budget() / cost * (1.0 + FEASIBILITY_SLACK)).floor();
        (m as usize).min(n)
    } else {
        n
    };
    let valuation = instance.valuation();
    let certificate: Vec<AgentId> = match valuation {
        Valuation::Additive { weights } => {
            let mut ids: Vec<AgentId> = (0..n).collect();
            ids.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
            ids.truncate(affordable);
            ids.sort_unstable();
            ids
        }
        Valuation::Concave { .. } => (0..affordable).collect(),
        Valuation::Coverage { .. } => {
            return Err(Error::NotUniform("coverage valuations have no closed form".into()))
        }
    };
    Ok(OptEstimate {
        value: valuation.value(&certificate)?,
        kind: OptKind::ClosedForm,
        certificate,
        guarantee: None,
    })
}

/// Size of the enumerated seed sets used by [`opt_greedy`].
pub fn enumeration_depth(n: usize) -> usize {
    match n {
        0..=32 => 3,
        33..=200 => 2,
        _ => 0,
    }
}

/// Greedy lower bound on OPT (lazy cost-benefit greedy, best singleton and
/// partial enumeration on small instances).
pub fn opt_greedy(instance: &Instance) -> OptEstimate {
    let n = instance.n();
    let depth = enumeration_depth(n);
    let candidates: Vec<AgentId> = (0..n).collect();
    let (value, certificate) =
        greedy_subset(instance.valuation(), instance.costs().as_slice(), &candidates, instance.budget(), depth);
    let guarantee = if depth >= 3 {
        1.0 - (-1.0f64).exp()
    } else {
        (1.0 - (-1.0f64).exp()) / 2.0
    };
    OptEstimate {
        value,
        kind: OptKind::GreedyLowerBound,
        certificate,
        guarantee: Some(guarantee),
    }
}

/// Best bound available: closed form, else exact, else greedy.
pub fn best_opt(instance: &Instance) -> OptEstimate {
    opt_closed_form(instance)
        .or_else(|_| opt_exact(instance))
        .unwrap_or_else(|_| opt_greedy(instance))
}

/// Greedy over `candidates` seeded with every feasible set of exactly
/// `depth` agents, compared against every feasible set smaller than that.
/// `depth = 0` is plain greedy plus the best singleton.
pub fn greedy_subset(
    valuation: &Valuation,
    costs: &[f64],
    candidates: &[AgentId],
    budget: f64,
    depth: usize,
) -> (f64, Vec<AgentId>) {
    let mut best = greedy_from(valuation, costs, candidates, budget, &[]);
    let mut consider = |value: f64, set: Vec<AgentId>| {
        if value > best.0 {
            best = (value, set);
        }
    };
    let feasible: Vec<AgentId> = candidates
        .iter()
        .copied()
        .filter(|&a| fits(0.0, costs[a], budget))
        .collect();
    if depth == 0 {
        if let Some(&a) = feasible
            .iter()
            .max_by(|&&a, &&b| valuation.singleton(a).total_cmp(&valuation.singleton(b)).then(b.cmp(&a)))
        {
            consider(valuation.singleton(a), vec![a]);
        }
    } else {
        let mut seed = Vec::with_capacity(depth);
        enumerate_seeds(&feasible, 0, depth, &mut seed, 0.0, budget, costs, &mut |seed| {
            if seed.len() == depth {
                let (v, s) = greedy_from(valuation, costs, candidates, budget, seed);
                consider(v, s);
            } else if !seed.is_empty() {
                let v = valuation.value(seed).expect("seed ids are candidates");
                consider(v, seed.to_vec());
            }
        });
    }
    let (value, mut set) = best;
    set.sort_unstable();
    (value, set)
}

#[allow(clippy::too_many_arguments)]
fn enumerate_seeds(
    pool: &[AgentId],
    start: usize,
    depth: usize,
    seed: &mut Vec<AgentId>,
    spent: f64,
    budget: f64,
    costs: &[f64],
    visit: &mut dyn FnMut(&[AgentId]),
) {
    visit(seed);
    if seed.len() == depth {
        return;
    }
    for i in start..pool.len() {
        let a = pool[i];
        if fits(spent, costs[a], budget) {
            seed.push(a);
            enumerate_seeds(pool, i + 1, depth, seed, spent + costs[a], budget, costs, visit);
            seed.pop();
        }
    }
}

#[derive(PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Lazy cost-benefit greedy starting from `seed`. Agents that no longer fit
/// are dropped and the scan continues.
fn greedy_from(
    valuation: &Valuation,
    costs: &[f64],
    candidates: &[AgentId],
    budget: f64,
    seed: &[AgentId],
) -> (f64, Vec<AgentId>) {
    let mut tracker = valuation.tracker();
    let mut spent = 0.0;
    for &a in seed {
        tracker.insert(a);
        spent += costs[a];
    }
    let mut heap: BinaryHeap<(Key, Reverse<AgentId>)> = candidates
        .iter()
        .filter(|a| !seed.contains(a))
        .map(|&a| (Key(ratio(tracker.marginal(a), costs[a])), Reverse(a)))
        .collect();
    while let Some((Key(stale), Reverse(agent))) = heap.pop() {
        if !fits(spent, costs[agent], budget) {
            continue;
        }
        let gain = tracker.marginal(agent);
        if gain <= 0.0 {
            continue;
        }
        let fresh = ratio(gain, costs[agent]);
        if fresh < stale {
            if let Some((Key(next), _)) = heap.peek() {
                if fresh < *next {
                    heap.push((Key(fresh), Reverse(agent)));
                    continue;
                }
            }
        }
        tracker.insert(agent);
        spent += costs[agent];
    }
    (tracker.value(), tracker.members().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain 2^n enumeration, independent of the branch and bound.
    fn brute_force(instance: &Instance) -> f64 {
        let n = instance.n();
        let costs = instance.costs().as_slice();
        (0u32..1 << n)
            .filter_map(|mask| {
                let set: Vec<AgentId> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                is_feasible(costs, &set, instance.budget())
                    .then(|| instance.valuation().value(&set).unwrap())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn exact_examples() {
        let inst = Instance::new(Valuation::additive(vec![1.0, 2.0, 3.0]).unwrap(), vec![1.0; 3], 2.0).unwrap();
        let opt = opt_exact(&inst).unwrap();
        assert_eq!(opt.value, 5.0);
        assert_eq!(opt.certificate, vec![1, 2]);

        let broke = inst.with_budget(0.0).unwrap();
        let opt = opt_exact(&broke).unwrap();
        assert_eq!(opt.value, 0.0);
        assert!(opt.certificate.is_empty());

        let unit = Instance::new(Valuation::additive(vec![1.0; 8]).unwrap(), vec![1.0; 8], 3.0).unwrap();
        assert_eq!(opt_exact(&unit).unwrap().value, 3.0);

        let big = Instance::new(Valuation::additive(vec![1.0; 25]).unwrap(), vec![1.0; 25], 3.0).unwrap();
        assert!(matches!(opt_exact(&big), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn closed_form_examples() {
        let hundred = Instance::new(Valuation::additive(vec![2.0; 300]).unwrap(), vec![0.01; 300], 1.0).unwrap();
        assert_eq!(opt_closed_form(&hundred).unwrap().value, 200.0);
        assert_eq!(opt_greedy(&hundred).value, 200.0);

        let mixed = Instance::new(Valuation::additive(vec![1.0; 2]).unwrap(), vec![1.0, 2.0], 2.0).unwrap();
        assert!(matches!(opt_closed_form(&mixed), Err(Error::NotUniform(_))));
    }

    #[test]
    fn greedy_single_affordable_agent() {
        let inst = Instance::new(Valuation::additive(vec![5.0, 9.0, 7.0]).unwrap(), vec![3.0, 1.0, 4.0], 1.5)
            .unwrap();
        let opt = opt_greedy(&inst);
        assert_eq!(opt.value, 9.0);
        assert_eq!(opt.certificate, vec![1]);
    }

    #[test]
    fn greedy_needs_best_singleton() {
        // Cost-benefit greedy takes the cheap agent and cannot afford the big one.
        let inst = Instance::new(Valuation::additive(vec![1.0, 10.0]).unwrap(), vec![0.01, 1.0], 1.0).unwrap();
        let candidates = [0, 1];
        let (value, set) = greedy_subset(inst.valuation(), inst.costs().as_slice(), &candidates, 1.0, 0);
        assert_eq!((value, set), (10.0, vec![1]));
    }

    fn instance_upto(max_n: usize) -> impl Strategy<Value = Instance> {
        (1usize..=max_n).prop_flat_map(|n| {
            let additive = prop::collection::vec(0.0f64..10.0, n).prop_map(|mut w| {
                w[0] += 1.0;
                Valuation::additive(w).unwrap()
            });
            let coverage = prop::collection::vec(prop::collection::vec(0u32..16, 1..6), n)
                .prop_map(|sets| Valuation::coverage(16, sets).unwrap());
            let concave = prop::collection::vec(0.0f64..3.0, n).prop_map(|mut steps| {
                steps.sort_by(|a, b| b.total_cmp(a));
                steps[0] += 0.5;
                let mut table = vec![0.0];
                for s in steps {
                    table.push(table.last().unwrap() + s);
                }
                Valuation::concave(table).unwrap()
            });
            (
                prop_oneof![additive, coverage, concave],
                prop::collection::vec(0.0f64..4.0, n),
                0.0f64..8.0,
            )
                .prop_map(|(v, c, b)| Instance::new(v, c, b).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn exact_matches_enumeration(inst in instance_upto(12)) {
            let opt = opt_exact(&inst).unwrap();
            let brute = brute_force(&inst);
            prop_assert!((opt.value - brute).abs() <= 1e-9 * brute.max(1.0));
            prop_assert!(is_feasible(inst.costs().as_slice(), &opt.certificate, inst.budget()));
            prop_assert!((inst.valuation().value(&opt.certificate).unwrap() - opt.value).abs() <= 1e-9);
        }

        #[test]
        fn greedy_sandwich(inst in instance_upto(20)) {
            let exact = opt_exact(&inst).unwrap().value;
            let greedy = opt_greedy(&inst);
            prop_assert!(greedy.value <= exact + 1e-9);
            prop_assert!(greedy.value >= (1.0 - (-1.0f64).exp()) * exact - 1e-9);
            prop_assert!(is_feasible(inst.costs().as_slice(), &greedy.certificate, inst.budget()));
        }
    }
}
