//! Monotone submodular valuation oracles.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::trial_rng;

pub type AgentId = usize;

/// Absolute tolerance used by the monotonicity/submodularity checks.
pub const CHECK_TOLERANCE: f64 = 1e-9;

/// Public valuation of the buyer over sets of agents.
///
/// Agents are identified by `0..len()`. The JSON form is tagged by `kind`:
///
/// ```json
/// {"kind": "additive", "weights": [1.0, 2.0]}
/// {"kind": "coverage", "universe": 3, "sets": [[0, 1], [1, 2]]}
/// {"kind": "concave", "table": [0.0, 1.0, 1.5]}
/// ```
///
/// A concave table lists `g(0), g(1), ..., g(n)` and values a set by its
/// cardinality alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Valuation {
    Additive { weights: Vec<f64> },
    Coverage { universe: usize, sets: Vec<Vec<u32>> },
    Concave { table: Vec<f64> },
}

impl Valuation {
    pub fn additive(weights: Vec<f64>) -> Result<Self> {
        let v = Valuation::Additive { weights };
        v.validate()?;
        Ok(v)
    }

    /// Coverage valuation; duplicate elements inside a set are merged.
    pub fn coverage(universe: usize, mut sets: Vec<Vec<u32>>) -> Result<Self> {
        for set in &mut sets {
            set.sort_unstable();
            set.dedup();
        }
        let v = Valuation::Coverage { universe, sets };
        v.validate()?;
        Ok(v)
    }

    pub fn concave(table: Vec<f64>) -> Result<Self> {
        let v = Valuation::Concave { table };
        v.validate()?;
        Ok(v)
    }

    /// Checks structural sanity. Concavity itself is not enforced here so that
    /// corrupted tables can still be built and fed to [`check_submodular`].
    pub fn validate(&self) -> Result<()> {
        match self {
            Valuation::Additive { weights } => {
                if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
                    return Err(Error::invalid(format!("additive weight {w} must be finite and >= 0")));
                }
            }
            Valuation::Coverage { universe, sets } => {
                for set in sets {
                    if let Some(e) = set.iter().find(|&&e| e as usize >= *universe) {
                        return Err(Error::invalid(format!(
                            "coverage element {e} outside universe of size {universe}"
                        )));
                    }
                    if set.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(Error::invalid("coverage sets must be sorted and duplicate-free"));
                    }
                }
            }
            Valuation::Concave { table } => {
                if table.first() != Some(&0.0) {
                    return Err(Error::invalid("concave table must start with g(0) = 0"));
                }
                if let Some(g) = table.iter().find(|g| !g.is_finite() || **g < 0.0) {
                    return Err(Error::invalid(format!("concave table entry {g} must be finite and >= 0")));
                }
            }
        }
        if self.is_empty() {
            return Err(Error::invalid("valuation has no agents"));
        }
        let vmax = self.vmax();
        if !(vmax.is_finite() && vmax > 0.0) {
            return Err(Error::invalid("largest singleton value must be positive"));
        }
        Ok(())
    }

    /// Number of agents in the ground set.
    pub fn len(&self) -> usize {
        match self {
            Valuation::Additive { weights } => weights.len(),
            Valuation::Coverage { sets, .. } => sets.len(),
            Valuation::Concave { table } => table.len().saturating_sub(1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Valuation::Additive { .. } => "additive",
            Valuation::Coverage { .. } => "coverage",
            Valuation::Concave { .. } => "concave",
        }
    }

    /// `f({agent})`. Panics on an out-of-range id.
    pub fn singleton(&self, agent: AgentId) -> f64 {
        match self {
            Valuation::Additive { weights } => weights[agent],
            Valuation::Coverage { sets, .. } => sets[agent].len() as f64,
            Valuation::Concave { table } => {
                assert!(agent + 1 < table.len(), "unknown agent id {agent}");
                table[1]
            }
        }
    }

    /// Largest singleton value.
    pub fn vmax(&self) -> f64 {
        (0..self.len()).map(|i| self.singleton(i)).fold(0.0, f64::max)
    }

    /// `f(set)`. The result does not depend on the order of `set`.
    pub fn value(&self, set: &[AgentId]) -> Result<f64> {
        let mut ids = set.to_vec();
        self.check_ids(&mut ids)?;
        let mut tracker = self.tracker();
        for id in ids {
            tracker.insert(id);
        }
        Ok(tracker.value())
    }

    /// `f(base ∪ {agent}) − f(base)`.
    pub fn marginal(&self, base: &[AgentId], agent: AgentId) -> Result<f64> {
        let mut ids = base.to_vec();
        self.check_ids(&mut ids)?;
        if agent >= self.len() {
            return Err(Error::UnknownAgent(agent));
        }
        if ids.binary_search(&agent).is_ok() {
            return Err(Error::AgentInBase(agent));
        }
        let mut tracker = self.tracker();
        for id in ids {
            tracker.insert(id);
        }
        Ok(tracker.marginal(agent))
    }

    /// Sorts `ids` and rejects unknown or repeated agents.
    fn check_ids(&self, ids: &mut [AgentId]) -> Result<()> {
        ids.sort_unstable();
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.len()) {
            return Err(Error::UnknownAgent(bad));
        }
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateAgent(w[0]));
        }
        Ok(())
    }

    /// Empty incremental evaluator.
    pub fn tracker(&self) -> ValueTracker<'_> {
        let covered = match self {
            Valuation::Coverage { universe, .. } => vec![0u64; universe.div_ceil(64)],
            _ => Vec::new(),
        };
        ValueTracker {
            valuation: self,
            members: Vec::new(),
            covered,
            value: 0.0,
        }
    }
}

/// Incrementally maintained `f(S)` for a growing set `S`.
///
/// Marginal queries cost `O(1)` for additive and concave valuations and
/// `O(|set|)` for coverage. Callers must never insert the same agent twice;
/// the checked entry points on [`Valuation`] guard against that.
#[derive(Clone, Debug)]
pub struct ValueTracker<'a> {
    valuation: &'a Valuation,
    members: Vec<AgentId>,
    covered: Vec<u64>,
    value: f64,
}

impl<'a> ValueTracker<'a> {
    pub fn valuation(&self) -> &'a Valuation {
        self.valuation
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn members(&self) -> &[AgentId] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// `f_S(agent)` for the current set `S`; `agent` must not be a member.
    pub fn marginal(&self, agent: AgentId) -> f64 {
        match self.valuation {
            Valuation::Additive { weights } => weights[agent],
            Valuation::Coverage { sets, .. } => sets[agent]
                .iter()
                .filter(|&&e| !self.is_covered(e))
                .count() as f64,
            Valuation::Concave { table } => {
                let k = self.members.len();
                assert!(agent + 1 < table.len(), "unknown agent id {agent}");
                table[k + 1] - table[k]
            }
        }
    }

    /// Adds `agent` and returns its marginal contribution.
    pub fn insert(&mut self, agent: AgentId) -> f64 {
        let gain = self.marginal(agent);
        if let Valuation::Coverage { sets, .. } = self.valuation {
            for &e in &sets[agent] {
                self.covered[e as usize / 64] |= 1 << (e % 64);
            }
        }
        self.members.push(agent);
        self.value = match self.valuation {
            // Recompute from the table so rounding never accumulates.
            Valuation::Concave { table } => table[self.members.len()],
            _ => self.value + gain,
        };
        gain
    }

    fn is_covered(&self, e: u32) -> bool {
        self.covered[e as usize / 64] & (1 << (e % 64)) != 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NotNormalized,
    Monotonicity,
    Submodularity,
}

/// A witness `(S, T, i)` with `S ⊆ T`, `i ∉ T` breaking one of the axioms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub smaller: Vec<AgentId>,
    pub larger: Vec<AgentId>,
    pub agent: Option<AgentId>,
    /// By how much the inequality fails.
    pub excess: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubmodularityReport {
    pub checked: u64,
    pub violation_count: u64,
    /// The first few witnesses found.
    pub violations: Vec<Violation>,
}

impl SubmodularityReport {
    const KEEP: usize = 32;

    pub fn is_clean(&self) -> bool {
        self.violation_count == 0
    }

    fn record(&mut self, v: Violation) {
        self.violation_count += 1;
        if self.violations.len() < Self::KEEP {
            self.violations.push(v);
        }
    }

    fn check(&mut self, smaller: &[AgentId], larger: &[AgentId], agent: Option<AgentId>, lhs: f64, rhs: f64, kind: ViolationKind) {
        self.checked += 1;
        if lhs > rhs + CHECK_TOLERANCE {
            self.record(Violation {
                kind,
                smaller: smaller.to_vec(),
                larger: larger.to_vec(),
                agent,
                excess: lhs - rhs,
            });
        }
    }
}

pub const EXHAUSTIVE_LIMIT: usize = 12;

/// Checks normalization, monotonicity and submodularity on `samples` random
/// chains `S ⊆ T` with `i ∉ T`.
pub fn check_submodular(valuation: &Valuation, samples: usize, seed: u64) -> SubmodularityReport {
    let mut rng = trial_rng(seed, 0);
    let n = valuation.len();
    let mut report = SubmodularityReport::default();
    let f = |s: &[AgentId]| valuation.value(s).expect("sampled ids are valid");
    report.check(&[], &[], None, f(&[]).abs(), 0.0, ViolationKind::NotNormalized);
    let mut ids: Vec<AgentId> = (0..n).collect();
    for _ in 0..samples {
        ids.shuffle(&mut rng);
        let t_len = rng.random_range(0..n);
        let larger = &ids[..t_len];
        let agent = ids[t_len];
        let smaller: Vec<AgentId> = larger.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        let (fs, ft) = (f(&smaller), f(larger));
        report.check(&smaller, larger, None, fs, ft, ViolationKind::Monotonicity);
        let gain_s = valuation.marginal(&smaller, agent).expect("agent outside S");
        let gain_t = valuation.marginal(larger, agent).expect("agent outside T");
        report.check(&smaller, larger, Some(agent), gain_t, gain_s, ViolationKind::Submodularity);
    }
    report
}

/// Checks every chain `S ⊆ T` and every `i ∉ T`; needs at most
/// [`EXHAUSTIVE_LIMIT`] agents.
pub fn check_submodular_exhaustive(valuation: &Valuation) -> Result<SubmodularityReport> {
    let n = valuation.len();
    if n > EXHAUSTIVE_LIMIT {
        return Err(Error::TooLarge {
            solver: "exhaustive submodularity check",
            n,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let members = |mask: usize| -> Vec<AgentId> { (0..n).filter(|i| mask >> i & 1 == 1).collect() };
    let values: Vec<f64> = (0..1usize << n)
        .map(|mask| valuation.value(&members(mask)).expect("valid ids"))
        .collect();
    let mut report = SubmodularityReport::default();
    report.check(&[], &[], None, values[0].abs(), 0.0, ViolationKind::NotNormalized);
    let full = (1usize << n) - 1;
    for t in 0..=full {
        let mut s = t;
        loop {
            if values[s] > values[t] + CHECK_TOLERANCE {
                report.check(&members(s), &members(t), None, values[s], values[t], ViolationKind::Monotonicity);
            } else {
                report.checked += 1;
            }
            for i in (0..n).filter(|i| t >> i & 1 == 0) {
                let gain_t = values[t | 1 << i] - values[t];
                let gain_s = values[s | 1 << i] - values[s];
                if gain_t > gain_s + CHECK_TOLERANCE {
                    report.check(&members(s), &members(t), Some(i), gain_t, gain_s, ViolationKind::Submodularity);
                } else {
                    report.checked += 1;
                }
            }
            if s == 0 {
                break;
            }
            s = (s - 1) & t;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_sets() -> Valuation {
        // {a,b}, {b,c}
        Valuation::coverage(3, vec![vec![0, 1], vec![1, 2]]).unwrap()
    }

    #[test]
    fn additive_value_and_marginal() {
        let v = Valuation::additive(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(v.value(&[0, 2]).unwrap(), 4.0);
        assert_eq!(v.value(&[]).unwrap(), 0.0);
        assert_eq!(v.marginal(&[0], 1).unwrap(), 2.0);
        assert_eq!(v.vmax(), 3.0);
    }

    #[test]
    fn coverage_counts_union() {
        let v = two_sets();
        assert_eq!(v.value(&[0, 1]).unwrap(), 3.0);
        assert_eq!(v.marginal(&[0], 1).unwrap(), 1.0);
    }

    #[test]
    fn concave_marginal_is_table_step() {
        let table: Vec<f64> = (0..=6).map(|x| (x as f64).sqrt()).collect();
        let v = Valuation::concave(table.clone()).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.marginal(&[0, 1, 2], 5).unwrap(), table[4] - table[3]);
    }

    #[test]
    fn bad_queries_are_rejected() {
        let v = two_sets();
        assert!(matches!(v.value(&[5]), Err(Error::UnknownAgent(5))));
        assert!(matches!(v.value(&[0, 0]), Err(Error::DuplicateAgent(0))));
        assert!(matches!(v.marginal(&[1], 1), Err(Error::AgentInBase(1))));
    }

    #[test]
    fn construction_validates() {
        assert!(Valuation::additive(vec![]).is_err());
        assert!(Valuation::additive(vec![0.0, 0.0]).is_err());
        assert!(Valuation::additive(vec![-1.0, 2.0]).is_err());
        assert!(Valuation::coverage(2, vec![vec![0, 2]]).is_err());
        assert!(Valuation::concave(vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn json_schema_round_trips() {
        let json = r#"{"kind":"coverage","universe":3,"sets":[[0,1],[1,2]]}"#;
        let v: Valuation = serde_json::from_str(json).unwrap();
        assert_eq!(v, two_sets());
        let back: Valuation = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn builtin_kinds_pass_checks() {
        let additive = Valuation::additive((1..=40).map(f64::from).collect()).unwrap();
        assert!(check_submodular(&additive, 1000, 1).is_clean());

        let coverage = Valuation::coverage(
            8,
            vec![vec![0, 1, 2], vec![2, 3], vec![3, 4, 5], vec![0, 7], vec![6], vec![1, 5, 6]],
        )
        .unwrap();
        let report = check_submodular_exhaustive(&coverage).unwrap();
        assert!(report.is_clean());
        assert!(report.checked > 0);
    }

    #[test]
    fn convex_kink_is_reported() {
        // g = 0, 1, 2, 4: the third agent adds more than the second.
        let kinked = Valuation::concave(vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let report = check_submodular_exhaustive(&kinked).unwrap();
        assert!(report.violation_count >= 1);
        assert!(report
            .violations
            .iter()
            .all(|v| v.kind == ViolationKind::Submodularity));
        assert!(!check_submodular(&kinked, 500, 3).is_clean());
    }

    #[test]
    fn exhaustive_check_has_a_size_limit() {
        let v = Valuation::additive(vec![1.0; 13]).unwrap();
        assert!(matches!(check_submodular_exhaustive(&v), Err(Error::TooLarge { .. })));
    }
}
