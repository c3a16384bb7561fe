//! Monte Carlo experiment runner.
//!
//! Every trial is a pure function of `(config, trial index)`: it gets its own
//! RNG stream, its own mechanism state and its own audit. Trials run on the
//! current rayon pool and are collected in index order, so outputs do not
//! depend on the thread count.

pub mod audit;
pub mod events;
pub mod output;
pub mod stats;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{gen_large_market, CostModel, Instance, LowerBoundDistribution, MarketKind};
use crate::mechanisms::{
    dynkin, linear_pricing_fixed, lm_mechanism, medium_market, posted_prices, Abort, Branch, ConstantsProfile,
    LmTrace, MechanismRun, OfferRecord,
};
use crate::offline_opt::{best_opt, OptEstimate, OptKind};
use crate::prediction::{i_star, prediction_mechanism, PredictionConfig, WalkTrace};
use crate::rng::{generator_rng, trial_rng, TrialRng};
use crate::arrival::ArrivalStream;

pub use audit::{audit_run, AuditReport};
pub use events::{lm_events, round_is_dense, EventFlags};
pub use stats::{wilson, Proportion, Z95};

fn one() -> f64 {
    1.0
}

fn uniform_costs() -> CostModel {
    CostModel::Uniform
}

/// Where the instances of an experiment come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// One generated market with a closed-form optimum, shared by all trials.
    LargeMarket {
        market: MarketKind,
        n: usize,
        k_target: usize,
        #[serde(default = "uniform_costs")]
        cost_model: CostModel,
        #[serde(default = "one")]
        budget: f64,
    },
    /// A fresh draw from the lower-bound distribution in every trial.
    LowerBound {
        n: usize,
        #[serde(default = "one")]
        budget: f64,
    },
    /// An instance file; OPT from the best available solver.
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MechanismChoice {
    Lm,
    PostedPrices,
    Dynkin,
    MediumMarket,
    /// Prediction `t̂ = ratio·OPT`; unset fields use the defaults for `n`.
    Prediction {
        ratio: f64,
        #[serde(default)]
        rounds_per_phase: Option<usize>,
        #[serde(default)]
        length_param: Option<f64>,
    },
    /// Linear pricing at `t̂ = ratio·OPT` over a random order.
    FixedThreshold { ratio: f64 },
}

/// A named profile or a full set of constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Named(String),
    Custom(ConstantsProfile),
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec::Named("default".into())
    }
}

impl ProfileSpec {
    pub fn resolve(&self) -> Result<ConstantsProfile> {
        let profile = match self {
            ProfileSpec::Named(name) => ConstantsProfile::by_name(name)?,
            ProfileSpec::Custom(profile) => profile.clone(),
        };
        profile.validate()?;
        Ok(profile)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    /// Trial records, one JSON object per line.
    #[serde(default)]
    pub records: Option<PathBuf>,
    #[serde(default)]
    pub summary: Option<PathBuf>,
    /// Offer ledgers of every trial as CSV.
    #[serde(default)]
    pub ledger: Option<PathBuf>,
    /// Prediction walk traces as CSV.
    #[serde(default)]
    pub walks: Option<PathBuf>,
}

fn enabled() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub family: Family,
    pub mechanism: MechanismChoice,
    #[serde(default)]
    pub profile: ProfileSpec,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub outputs: Outputs,
    /// Compute good-event flags for LM runs (density checks cost a greedy
    /// solve per round).
    #[serde(default = "enabled")]
    pub events: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        self.profile.resolve()?;
        match &self.mechanism {
            MechanismChoice::Prediction { ratio, .. } | MechanismChoice::FixedThreshold { ratio }
                if !(ratio.is_finite() && *ratio > 0.0) =>
            {
                Err(Error::invalid(format!("ratio {ratio} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

/// Outcome of one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub branch: Branch,
    pub value: f64,
    pub payments: f64,
    pub budget: f64,
    pub opt_value: f64,
    pub opt_kind: OptKind,
    pub events: Option<EventFlags>,
    pub abort: Option<Abort>,
    pub consumed: usize,
    pub offers: usize,
    pub audit: AuditReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lm: Option<LmTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walk: Option<WalkTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_star: Option<i32>,
}

impl TrialRecord {
    pub fn ratio(&self) -> Option<f64> {
        (self.opt_value > 0.0).then(|| self.value / self.opt_value)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    /// Number of trials the flags were computed for (LM runs only).
    pub trials: usize,
    pub e1: Proportion,
    pub e2: Proportion,
    pub e3: Proportion,
    pub e4: Proportion,
    pub e5: Proportion,
    pub e5_given_e2: Proportion,
    pub e: Proportion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    pub mean_value: f64,
    pub value_std_error: f64,
    pub mean_payments: f64,
    pub mean_opt: f64,
    /// Mean of `value / OPT`.
    pub mean_ratio: f64,
    /// `mean OPT / mean value`; absent when nothing was collected.
    pub competitive_ratio: Option<f64>,
    /// Mean value over trials where event E held.
    pub mean_value_event_e: Option<f64>,
    pub positive_value: Proportion,
    /// Among LM runs that did not abort, how often spend stayed within `B/10`.
    pub spend_within_tenth: Option<Proportion>,
    pub events: Option<EventSummary>,
    pub budget_violations: usize,
    pub ir_violations: usize,
    pub linear_form_violations: usize,
    pub value_mismatches: usize,
    pub aborts: BTreeMap<String, usize>,
    pub branches: BTreeMap<String, usize>,
    pub opt_kind: OptKind,
    /// True when every trial passed its audit.
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub summary: Summary,
    pub records: Vec<TrialRecord>,
}

/// Signature of a mechanism the harness can drive.
pub type MechanismFn<'a> = dyn Fn(&Instance, f64, &ConstantsProfile, &mut TrialRng) -> MechanismRun + Sync + 'a;

enum Source {
    Fixed(Instance, OptEstimate),
    LowerBound(LowerBoundDistribution, Vec<Instance>),
}

impl Source {
    fn build(family: &Family, master_seed: u64) -> Result<Self> {
        match family {
            Family::LargeMarket {
                market,
                n,
                k_target,
                cost_model,
                budget,
            } => {
                let generated =
                    gen_large_market(*market, *n, *k_target, *cost_model, *budget, &mut generator_rng(master_seed))?;
                Ok(Source::Fixed(generated.instance, generated.opt))
            }
            Family::LowerBound { n, budget } => {
                let dist = LowerBoundDistribution::new(*n, *budget)?;
                let support = (0..=dist.log_n()).map(|i| dist.instance(i)).collect::<Result<_>>()?;
                Ok(Source::LowerBound(dist, support))
            }
            Family::File { path } => {
                let instance = Instance::load(path)?;
                let opt = best_opt(&instance);
                Ok(Source::Fixed(instance, opt))
            }
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (&Instance, f64, OptKind) {
        match self {
            Source::Fixed(instance, opt) => (instance, opt.value, opt.kind),
            Source::LowerBound(dist, support) => {
                let index = dist.sample_index(rng);
                (&support[index as usize], f64::from(index).exp2(), OptKind::ClosedForm)
            }
        }
    }
}

fn builtin(choice: &MechanismChoice) -> impl Fn(&Instance, f64, &ConstantsProfile, &mut TrialRng) -> MechanismRun + Sync + '_ {
    move |instance, opt, profile, rng| {
        let (market, costs) = (instance.market(), instance.costs());
        match choice {
            MechanismChoice::Lm => lm_mechanism(market, costs, profile, rng),
            MechanismChoice::PostedPrices => posted_prices(market, costs, profile, rng),
            MechanismChoice::Dynkin => dynkin(market, costs, rng),
            MechanismChoice::MediumMarket => medium_market(market, costs, profile, rng),
            MechanismChoice::Prediction {
                ratio,
                rounds_per_phase,
                length_param,
            } => {
                let mut config = PredictionConfig::with_defaults(ratio * opt, instance.n());
                if let Some(rounds) = rounds_per_phase {
                    config.rounds_per_phase = *rounds;
                }
                if let Some(a) = length_param {
                    config.length_param = *a;
                }
                prediction_mechanism(market, costs, &config, profile, rng)
            }
            MechanismChoice::FixedThreshold { ratio } => {
                let stream = ArrivalStream::random(instance.n(), rng);
                linear_pricing_fixed(market, costs, stream, ratio * opt)
            }
        }
    }
}

struct TrialOutput {
    record: TrialRecord,
    ledger: Option<Vec<OfferRecord>>,
}

fn run_trial(
    source: &Source,
    mechanism: &MechanismFn<'_>,
    config: &ExperimentConfig,
    profile: &ConstantsProfile,
    trial: u64,
    keep_ledger: bool,
) -> TrialOutput {
    let mut rng = trial_rng(config.master_seed, trial);
    let (instance, opt_value, opt_kind) = source.draw(&mut rng);
    let run = mechanism(instance, opt_value, profile, &mut rng);
    let audit = audit_run(instance, &run);
    let events = (config.events && run.branch == Branch::Lm).then(|| lm_events(instance, &run, profile, opt_value));
    let i_star = match &config.mechanism {
        MechanismChoice::Prediction { ratio, .. } if opt_value > 0.0 => Some(i_star(ratio * opt_value, opt_value)),
        _ => None,
    };
    let record = TrialRecord {
        trial,
        branch: run.branch,
        value: run.value,
        payments: run.payments,
        budget: instance.budget(),
        opt_value,
        opt_kind,
        events,
        abort: run.abort,
        consumed: run.consumed,
        offers: run.ledger.len(),
        audit,
        lm: run.lm,
        walk: run.walk,
        i_star,
    };
    TrialOutput {
        record,
        ledger: keep_ledger.then_some(run.ledger),
    }
}

/// Runs the configured mechanism.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let mechanism = builtin(&config.mechanism);
    run_experiment_with(config, &mechanism)
}

/// Runs `mechanism` in place of the configured one; used to check that the
/// audits catch misbehaving mechanisms.
pub fn run_experiment_with(config: &ExperimentConfig, mechanism: &MechanismFn<'_>) -> Result<ExperimentOutcome> {
    config.validate()?;
    let profile = config.profile.resolve()?;
    let source = Source::build(&config.family, config.master_seed)?;
    let keep_ledger = config.outputs.ledger.is_some();
    let outputs: Vec<TrialOutput> = (0..config.trials as u64)
        .into_par_iter()
        .map(|trial| run_trial(&source, mechanism, config, &profile, trial, keep_ledger))
        .collect();
    let records: Vec<TrialRecord> = outputs.iter().map(|o| o.record.clone()).collect();
    let summary = summarize(&records);
    write_outputs(config, &summary, &records, &outputs)?;
    Ok(ExperimentOutcome { summary, records })
}

fn write_outputs(config: &ExperimentConfig, summary: &Summary, records: &[TrialRecord], outputs: &[TrialOutput]) -> Result<()> {
    let paths = &config.outputs;
    if let Some(path) = &paths.records {
        output::write_atomic(path, &output::to_jsonl(records)?)?;
    }
    if let Some(path) = &paths.summary {
        output::write_atomic(path, serde_json::to_string_pretty(summary)?.as_bytes())?;
    }
    if let Some(path) = &paths.ledger {
        let ledgers = outputs
            .iter()
            .filter_map(|o| o.ledger.as_deref().map(|l| (o.record.trial, l)));
        output::write_atomic(path, &output::ledger_csv(ledgers)?)?;
    }
    if let Some(path) = &paths.walks {
        let walks = records.iter().filter_map(|r| r.walk.as_ref().map(|w| (r.trial, w)));
        output::write_atomic(path, &output::walk_csv(walks)?)?;
    }
    Ok(())
}

pub fn summarize(records: &[TrialRecord]) -> Summary {
    let trials = records.len();
    let values: Vec<f64> = records.iter().map(|r| r.value).collect();
    let mean_value = stats::mean(&values);
    let mean_opt = stats::mean(&records.iter().map(|r| r.opt_value).collect::<Vec<_>>());
    let ratios: Vec<f64> = records.iter().filter_map(TrialRecord::ratio).collect();
    let count = |pred: &dyn Fn(&TrialRecord) -> bool| records.iter().filter(|r| pred(r)).count();

    let lm_flags: Vec<EventFlags> = records.iter().filter_map(|r| r.events).collect();
    let events = (!lm_flags.is_empty()).then(|| {
        let freq = |f: &dyn Fn(&EventFlags) -> bool| wilson(lm_flags.iter().filter(|e| f(e)).count(), lm_flags.len(), Z95);
        let e2_count = lm_flags.iter().filter(|e| e.e2).count();
        EventSummary {
            trials: lm_flags.len(),
            e1: freq(&|e| e.e1),
            e2: freq(&|e| e.e2),
            e3: freq(&|e| e.e3),
            e4: freq(&|e| e.e4),
            e5: freq(&|e| e.e5),
            e5_given_e2: wilson(lm_flags.iter().filter(|e| e.e5).count(), e2_count, Z95),
            e: freq(&|e| e.e),
        }
    });
    let event_e_values: Vec<f64> = records
        .iter()
        .filter(|r| r.events.is_some_and(|e| e.e))
        .map(|r| r.value)
        .collect();

    let clean_lm: Vec<&TrialRecord> = records
        .iter()
        .filter(|r| r.branch == Branch::Lm && r.abort.is_none())
        .collect();
    let spend_within_tenth = (!clean_lm.is_empty()).then(|| {
        let within = clean_lm.iter().filter(|r| r.payments <= r.budget / 10.0).count();
        wilson(within, clean_lm.len(), Z95)
    });

    let mut aborts = BTreeMap::new();
    let mut branches = BTreeMap::new();
    for r in records {
        let reason = match r.abort {
            None => "none".to_string(),
            Some(abort) => abort_name(abort).to_string(),
        };
        *aborts.entry(reason).or_insert(0) += 1;
        let branch = serde_json::to_value(r.branch)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        *branches.entry(branch).or_insert(0) += 1;
    }

    let budget_violations = count(&|r| r.audit.budget_excess.is_some() || r.audit.payment_mismatch);
    let ir_violations = records.iter().map(|r| r.audit.ir_violations).sum();
    let linear_form_violations = records.iter().map(|r| r.audit.linear_form_violations).sum();
    let value_mismatches = count(&|r| r.audit.value_mismatch);
    Summary {
        trials,
        mean_value,
        value_std_error: stats::std_error(&values),
        mean_payments: stats::mean(&records.iter().map(|r| r.payments).collect::<Vec<_>>()),
        mean_opt,
        mean_ratio: stats::mean(&ratios),
        competitive_ratio: (mean_value > 0.0).then(|| mean_opt / mean_value),
        mean_value_event_e: (!event_e_values.is_empty()).then(|| stats::mean(&event_e_values)),
        positive_value: wilson(count(&|r| r.value > 0.0), trials, Z95),
        spend_within_tenth,
        events,
        budget_violations,
        ir_violations,
        linear_form_violations,
        value_mismatches,
        aborts,
        branches,
        opt_kind: records.first().map_or(OptKind::ClosedForm, |r| r.opt_kind),
        passed: records.iter().all(|r| r.audit.passed()),
    }
}

pub fn abort_name(abort: Abort) -> &'static str {
    match abort {
        Abort::StreamExhausted => "stream_exhausted",
        Abort::ValueAboveVmax { .. } => "value_above_vmax",
        Abort::BudgetDepleted => "budget_depleted",
        Abort::RoundsExhausted => "rounds_exhausted",
        Abort::ZeroValueEstimate => "zero_value_estimate",
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub records: usize,
    /// Trials whose recomputed record differs from the stored one.
    pub mismatched: Vec<u64>,
    /// Stored records whose payments exceed their budget.
    pub budget_violations: Vec<u64>,
    /// Stored or recomputed records that fail their audit.
    pub audit_failures: Vec<u64>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.mismatched.is_empty() && self.budget_violations.is_empty() && self.audit_failures.is_empty()
    }
}

/// Re-runs every stored trial from its config and compares the results.
pub fn replay(config: &ExperimentConfig, stored: &[TrialRecord]) -> Result<ReplayReport> {
    config.validate()?;
    let profile = config.profile.resolve()?;
    let source = Source::build(&config.family, config.master_seed)?;
    let mechanism = builtin(&config.mechanism);
    let fresh: Vec<TrialRecord> = stored
        .par_iter()
        .map(|r| run_trial(&source, &mechanism, config, &profile, r.trial, false).record)
        .collect();
    let mut report = ReplayReport {
        records: stored.len(),
        ..ReplayReport::default()
    };
    for (old, new) in stored.iter().zip(&fresh) {
        if serde_json::to_value(old)? != serde_json::to_value(new)? {
            report.mismatched.push(old.trial);
        }
        if old.payments > old.budget * (1.0 + audit::BUDGET_TOLERANCE) {
            report.budget_violations.push(old.trial);
        }
        if !old.audit.passed() || !new.audit.passed() {
            report.audit_failures.push(old.trial);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(trials: usize) -> ExperimentConfig {
        ExperimentConfig {
            family: Family::LargeMarket {
                market: MarketKind::Additive,
                n: 4096,
                k_target: 1024,
                cost_model: CostModel::Uniform,
                budget: 1.0,
            },
            mechanism: MechanismChoice::PostedPrices,
            profile: ProfileSpec::Named("desk".into()),
            trials,
            master_seed: 11,
            outputs: Outputs::default(),
            events: true,
        }
    }

    #[test]
    fn config_json_shape() {
        let json = r#"{
            "family": {"kind": "lower_bound", "n": 1024},
            "mechanism": {"kind": "fixed_threshold", "ratio": 0.5},
            "profile": "desk",
            "trials": 10,
            "master_seed": 3
        }"#;
        let parsed: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(parsed.family, Family::LowerBound { n: 1024, budget: 1.0 });
        assert!(parsed.events);
        parsed.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&parsed).unwrap()).unwrap();
        assert_eq!(back, parsed);
    }

    #[test]
    fn invalid_configs() {
        let mut c = config(0);
        assert!(c.validate().is_err());
        c.trials = 1;
        c.profile = ProfileSpec::Named("laptop".into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn deterministic_and_audited() {
        let c = config(12);
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(output::to_jsonl(&a.records).unwrap(), output::to_jsonl(&b.records).unwrap());
        assert!(a.summary.passed, "{:?}", a.summary);
        let report = replay(&c, &a.records).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn tampered_record_fails_replay() {
        let c = config(3);
        let mut records = run_experiment(&c).unwrap().records;
        records[1].value += 1.0;
        let report = replay(&c, &records).unwrap();
        assert_eq!(report.mismatched, vec![1]);
    }
}
