//! Agents, instances and instance generators.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::output::write_atomic;
use crate::offline_opt::{OptEstimate, OptKind};
use crate::valuation::{AgentId, Valuation};

/// The only channel through which a mechanism learns anything about costs.
pub trait Responder {
    /// Does `agent` accept a take-it-or-leave-it offer of `price`?
    fn accepts(&self, agent: AgentId, price: f64) -> bool;
}

/// Private costs of all agents.
#[derive(Clone, Debug, PartialEq)]
pub struct CostBook {
    costs: Vec<f64>,
}

impl CostBook {
    pub fn new(costs: Vec<f64>) -> Result<Self> {
        if let Some(c) = costs.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(Error::invalid(format!("cost {c} must be finite and >= 0")));
        }
        Ok(CostBook { costs })
    }

    pub fn cost(&self, agent: AgentId) -> f64 {
        self.costs[agent]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.costs
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }
}

impl Responder for CostBook {
    fn accepts(&self, agent: AgentId, price: f64) -> bool {
        price >= self.costs[agent]
    }
}

/// Everything a mechanism is allowed to know: the valuation and the budget.
#[derive(Clone, Debug, PartialEq)]
pub struct Market {
    valuation: Valuation,
    budget: f64,
    vmax: f64,
}

impl Market {
    pub fn new(valuation: Valuation, budget: f64) -> Result<Self> {
        valuation.validate()?;
        if !(budget.is_finite() && budget >= 0.0) {
            return Err(Error::invalid(format!("budget {budget} must be finite and >= 0")));
        }
        let vmax = valuation.vmax();
        Ok(Market { valuation, budget, vmax })
    }

    pub fn valuation(&self) -> &Valuation {
        &self.valuation
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// Number of agents.
    pub fn n(&self) -> usize {
        self.valuation.len()
    }

    /// True largest singleton value. Mechanisms must learn their own estimate;
    /// this is for reporting and event accounting.
    pub fn vmax(&self) -> f64 {
        self.vmax
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: AgentId,
    pub cost: f64,
}

/// A complete problem: public market plus private costs.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    market: Market,
    costs: CostBook,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    budget: f64,
    agents: Vec<Agent>,
    valuation: Valuation,
}

impl Instance {
    pub fn new(valuation: Valuation, costs: Vec<f64>, budget: f64) -> Result<Self> {
        if costs.len() != valuation.len() {
            return Err(Error::invalid(format!(
                "{} costs for a valuation over {} agents",
                costs.len(),
                valuation.len()
            )));
        }
        Ok(Instance {
            market: Market::new(valuation, budget)?,
            costs: CostBook::new(costs)?,
        })
    }

    pub fn market(&self) -> &Market {
        &self.market
    }

    pub fn costs(&self) -> &CostBook {
        &self.costs
    }

    pub fn valuation(&self) -> &Valuation {
        self.market.valuation()
    }

    pub fn budget(&self) -> f64 {
        self.market.budget()
    }

    pub fn n(&self) -> usize {
        self.market.n()
    }

    pub fn agents(&self) -> Vec<Agent> {
        self.costs
            .as_slice()
            .iter()
            .enumerate()
            .map(|(id, &cost)| Agent { id, cost })
            .collect()
    }

    /// Same market with the budget replaced.
    pub fn with_budget(&self, budget: f64) -> Result<Self> {
        Instance::new(self.valuation().clone(), self.costs.as_slice().to_vec(), budget)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = InstanceFile {
            budget: self.budget(),
            agents: self.agents(),
            valuation: self.valuation().clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parses the instance JSON format. Agent ids must be exactly `0..n`,
    /// in any order.
    pub fn from_json(json: &str) -> Result<Self> {
        let mut file: InstanceFile = serde_json::from_str(json)?;
        file.agents.sort_by_key(|a| a.id);
        for (expected, agent) in file.agents.iter().enumerate() {
            if agent.id != expected {
                return Err(if expected > 0 && agent.id == file.agents[expected - 1].id {
                    Error::DuplicateAgent(agent.id)
                } else {
                    Error::invalid(format!("agent ids must be 0..n, missing {expected}"))
                });
            }
        }
        let costs = file.agents.iter().map(|a| a.cost).collect();
        Instance::new(file.valuation, costs, file.budget)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Instance::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }
}

fn log2_exact(n: usize) -> Result<u32> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::invalid(format!("n = {n} must be a power of two")));
    }
    Ok(n.trailing_zeros())
}

/// Instance `I_index` of the lower-bound family: `n` unit-value agents, each
/// costing `budget / 2^index`.
pub fn gen_lower_bound_instance(index: u32, n: usize, budget: f64) -> Result<Instance> {
    let log_n = log2_exact(n)?;
    if index > log_n {
        return Err(Error::invalid(format!("index {index} exceeds log2 n = {log_n}")));
    }
    if !(budget.is_finite() && budget > 0.0) {
        return Err(Error::invalid("lower-bound budget must be positive"));
    }
    let cost = budget / f64::from(index).exp2();
    Instance::new(Valuation::additive(vec![1.0; n])?, vec![cost; n], budget)
}

/// The hard distribution over `I_0..I_{log n}` for non-adaptive pricing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundDistribution {
    n: usize,
    budget: f64,
}

impl LowerBoundDistribution {
    pub fn new(n: usize, budget: f64) -> Result<Self> {
        log2_exact(n)?;
        if !(budget.is_finite() && budget > 0.0) {
            return Err(Error::invalid("lower-bound budget must be positive"));
        }
        Ok(LowerBoundDistribution { n, budget })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn log_n(&self) -> u32 {
        self.n.trailing_zeros()
    }

    /// `p_i = 2^-(i+1)` for `i < log n` and `p_{log n} = 1/n`.
    pub fn probabilities(&self) -> Vec<f64> {
        let log_n = self.log_n();
        (0..=log_n)
            .map(|i| {
                if i < log_n {
                    (-f64::from(i + 1)).exp2()
                } else {
                    1.0 / self.n as f64
                }
            })
            .collect()
    }

    /// `E[OPT] = Σ p_i 2^i`, which equals `log2(n)/2 + 1`.
    pub fn expected_opt(&self) -> f64 {
        self.probabilities()
            .iter()
            .enumerate()
            .map(|(i, p)| p * (i as f64).exp2())
            .sum()
    }

    /// Draws an index with the exact dyadic probabilities.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.index_of_slot(rng.random_range(0..self.n))
    }

    /// Index for a uniform `u` in `[0, 1)`; lets callers stratify draws.
    pub fn index_from_unit(&self, u: f64) -> u32 {
        let slot = ((u * self.n as f64) as usize).min(self.n - 1);
        self.index_of_slot(slot)
    }

    fn index_of_slot(&self, slot: usize) -> u32 {
        // m is uniform on 1..=n; index i owns n/2^(i+1) < m <= n/2^i.
        let m = self.n - slot;
        let ceil_log2 = usize::BITS - (m - 1).leading_zeros();
        self.log_n() - ceil_log2
    }

    pub fn instance(&self, index: u32) -> Result<Instance> {
        gen_lower_bound_instance(index, self.n, self.budget)
    }
}

/// Draws `I_i ~ D_I`; returns the index alongside the instance.
pub fn sample_lower_bound<R: Rng + ?Sized>(
    dist: &LowerBoundDistribution,
    rng: &mut R,
) -> Result<(u32, Instance)> {
    let index = dist.sample_index(rng);
    Ok((index, dist.instance(index)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketKind {
    Additive,
    Coverage,
    Concave,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModel {
    /// Every agent costs `B / k`.
    Uniform,
    /// Uniform random costs, rescaled so the `k` cheapest agents cost exactly `B`.
    UniformRandom,
    /// Pareto(1.5) costs, rescaled like `UniformRandom`.
    HeavyTail,
}

/// A generated instance together with its known optimum.
#[derive(Clone, Debug)]
pub struct GeneratedInstance {
    pub instance: Instance,
    pub opt: OptEstimate,
}

/// Elements per agent in the coverage family.
pub const COVERAGE_BLOCK: usize = 4;

/// Builds a market with `OPT / vmax = k_target` and a closed-form optimum.
///
/// * additive: unit weights; any cost model.
/// * coverage: `k_target` disjoint blocks of [`COVERAGE_BLOCK`] elements plus
///   decoys covering `COVERAGE_BLOCK - 1` random elements of the same
///   universe; uniform costs only.
/// * concave: `g(x) = min(x, k_target)`; uniform costs only.
pub fn gen_large_market<R: Rng + ?Sized>(
    kind: MarketKind,
    n: usize,
    k_target: usize,
    cost_model: CostModel,
    budget: f64,
    rng: &mut R,
) -> Result<GeneratedInstance> {
    if k_target == 0 || n < k_target {
        return Err(Error::invalid(format!("need 1 <= k_target <= n, got k_target = {k_target}, n = {n}")));
    }
    if !(budget.is_finite() && budget > 0.0) {
        return Err(Error::invalid("budget must be positive"));
    }
    if kind != MarketKind::Additive && cost_model != CostModel::Uniform {
        return Err(Error::invalid(format!("{kind:?} markets support only uniform costs")));
    }
    let k = k_target as f64;
    let uniform = budget / k;
    let (valuation, costs, opt_value, certificate) = match kind {
        MarketKind::Additive => {
            let costs = match cost_model {
                CostModel::Uniform => vec![uniform; n],
                CostModel::UniformRandom => {
                    calibrate((0..n).map(|_| rng.random::<f64>()).collect(), k_target, budget)
                }
                CostModel::HeavyTail => calibrate(
                    (0..n).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / 1.5)).collect(),
                    k_target,
                    budget,
                ),
            };
            let mut by_cost: Vec<AgentId> = (0..n).collect();
            by_cost.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
            by_cost.truncate(k_target);
            (Valuation::additive(vec![1.0; n])?, costs, k, by_cost)
        }
        MarketKind::Coverage => {
            let s = COVERAGE_BLOCK;
            let universe = k_target * s;
            let mut sets: Vec<Vec<u32>> = (0..k_target)
                .map(|j| ((j * s) as u32..((j + 1) * s) as u32).collect())
                .collect();
            let elements: Vec<u32> = (0..universe as u32).collect();
            for _ in k_target..n {
                sets.push(elements.choose_multiple(rng, s - 1).copied().collect());
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            // order[new_id] = old index; blocks are old indices < k_target.
            let shuffled: Vec<Vec<u32>> = order.iter().map(|&old| sets[old].clone()).collect();
            let certificate = (0..n).filter(|&id| order[id] < k_target).collect();
            (
                Valuation::coverage(universe, shuffled)?,
                vec![uniform; n],
                (universe) as f64,
                certificate,
            )
        }
        MarketKind::Concave => {
            let table = (0..=n).map(|x| x.min(k_target) as f64).collect();
            (Valuation::concave(table)?, vec![uniform; n], k, (0..k_target).collect())
        }
    };
    let instance = Instance::new(valuation, costs, budget)?;
    let opt = OptEstimate {
        value: opt_value,
        kind: OptKind::ClosedForm,
        certificate,
        guarantee: None,
    };
    Ok(GeneratedInstance { instance, opt })
}

/// Rescales raw costs so the `k` cheapest sum to exactly `budget`.
fn calibrate(raw: Vec<f64>, k: usize, budget: f64) -> Vec<f64> {
    let mut sorted = raw.clone();
    sorted.sort_by(f64::total_cmp);
    let cheapest: f64 = sorted[..k].iter().sum();
    let scale = if cheapest > 0.0 { budget / cheapest } else { 1.0 };
    raw.into_iter().map(|c| c * scale).collect()
}
