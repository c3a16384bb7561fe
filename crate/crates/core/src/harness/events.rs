//! Good-event accounting for LM runs against a known optimum.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::arrival::RoundPlan;
use crate::instance::Instance;
use crate::mechanisms::{Abort, ConstantsProfile, MechanismRun, Period, RoundLog};
use crate::offline_opt::greedy_subset;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventFlags {
    /// The learned maximum equals the true `vmax`.
    pub e1: bool,
    /// `OPT/8` lies in one of the two candidate intervals.
    pub e2: bool,
    /// Every binary-search and exploitation phase is dense.
    pub e3: bool,
    /// The stream never ran dry.
    pub e4: bool,
    /// The chosen interval contains `OPT/8`.
    pub e5: bool,
    /// All of the above and no abort at all.
    pub e: bool,
}

/// Greedy lower bound on the optimum of a round's agents under the round
/// budget `3·C·a·B`, compared with `C·a·OPT`. Greedy can only under-report
/// density.
pub fn round_is_dense(instance: &Instance, round: &RoundLog, profile: &ConstantsProfile, opt: f64) -> bool {
    let a = round.length_param;
    let share = RoundPlan::budget_share(profile.c, a, instance.budget());
    let (best, _) = greedy_subset(instance.valuation(), instance.costs().as_slice(), &round.agents, share, 0);
    best >= profile.c * a * opt
}

pub fn lm_events(instance: &Instance, run: &MechanismRun, profile: &ConstantsProfile, opt: f64) -> EventFlags {
    let Some(trace) = &run.lm else {
        return EventFlags::default();
    };
    let target = opt / 8.0;
    let e1 = !trace.fallback && trace.vmax_estimate == Some(instance.market().vmax());
    let e2 = trace
        .candidates
        .is_some_and(|pair| pair.iter().any(|interval| interval.contains(target)));
    let e5 = e2 && trace.chosen.is_some_and(|interval| interval.contains(target));
    let e4 = run.abort != Some(Abort::StreamExhausted);

    let mut phases: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for round in run
        .rounds
        .iter()
        .filter(|r| matches!(r.period, Period::BinarySearch | Period::Exploitation))
    {
        let entry = phases.entry(round.phase).or_default();
        entry.0 += usize::from(round_is_dense(instance, round, profile, opt));
        entry.1 += 1;
    }
    let e3 = phases.values().all(|&(dense, total)| 2 * dense >= total);
    EventFlags {
        e1,
        e2,
        e3,
        e4,
        e5,
        e: e1 && e2 && e3 && e4 && e5 && run.abort.is_none(),
    }
}
