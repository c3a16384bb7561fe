//! Post-hoc checks of a finished run. This is the only code outside the
//! responder that reads private costs.

use serde::{Deserialize, Serialize};

use crate::instance::Instance;
use crate::mechanisms::MechanismRun;

/// Absolute slack, relative to `B`, for summing payments in a different order
/// than the mechanism subtracted them.
pub const BUDGET_TOLERANCE: f64 = 1e-9;
/// Relative tolerance of the linear-price identity.
pub const LINEAR_FORM_TOLERANCE: f64 = 1e-12;
const VALUE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Total accepted payments minus `B`, when positive.
    pub budget_excess: Option<f64>,
    /// The run's payment total disagrees with its ledger.
    pub payment_mismatch: bool,
    /// Ledger entries where acceptance disagrees with `price ≥ cost`.
    pub ir_violations: usize,
    /// Positive prices that are not `marginal·B/t̂`.
    pub linear_form_violations: usize,
    /// Reported value differs from `f(solution)` or the solution differs from
    /// the accepted agents.
    pub value_mismatch: bool,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.budget_excess.is_none()
            && !self.payment_mismatch
            && self.ir_violations == 0
            && self.linear_form_violations == 0
            && !self.value_mismatch
    }
}

pub fn audit_run(instance: &Instance, run: &MechanismRun) -> AuditReport {
    let budget = instance.budget();
    let costs = instance.costs();
    let paid: f64 = run.ledger.iter().map(|r| r.payment()).sum();
    let slack = BUDGET_TOLERANCE * budget.max(1.0);
    let total = paid.max(run.payments);
    let budget_excess = (total > budget + slack).then_some(total - budget);
    let ir_violations = run
        .ledger
        .iter()
        .filter(|r| r.accepted != (r.price >= costs.cost(r.agent)))
        .count();
    let linear_form_violations = run
        .ledger
        .iter()
        .filter(|r| r.price > 0.0)
        .filter(|r| {
            let expected = r.marginal * budget / r.threshold;
            (r.price - expected).abs() > LINEAR_FORM_TOLERANCE * r.price.max(expected)
        })
        .count();
    let mut accepted: Vec<_> = run.ledger.iter().filter(|r| r.accepted).map(|r| r.agent).collect();
    accepted.sort_unstable();
    let mut solution = run.solution.clone();
    solution.sort_unstable();
    let value_mismatch = accepted != solution
        || match instance.valuation().value(&solution) {
            Ok(v) => (v - run.value).abs() > VALUE_TOLERANCE * v.max(1.0),
            Err(_) => true,
        };
    AuditReport {
        budget_excess,
        payment_mismatch: (paid - run.payments).abs() > slack,
        ir_violations,
        linear_form_violations,
        value_mismatch,
    }
}
