use procure_core::arrival::ArrivalStream;
use procure_core::harness::stats::chi_square_gof;
use procure_core::harness::{
    run_experiment, run_experiment_with, ExperimentConfig, Family, MechanismChoice, Outputs, ProfileSpec,
};
use procure_core::instance::gen_large_market;
use procure_core::mechanisms::{learning_max_value, posted_prices};
use procure_core::rng::trial_rng;
use procure_core::{ConstantsProfile, CostModel, Instance, LowerBoundDistribution, MarketKind, MechanismState, Valuation};

#[test]
fn lower_bound_sampler_matches_distribution() {
    let dist = LowerBoundDistribution::new(1024, 1.0).unwrap();
    let probs = dist.probabilities();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let mut counts = vec![0u64; probs.len()];
    let mut rng = trial_rng(99, 0);
    for _ in 0..100_000 {
        counts[dist.sample_index(&mut rng) as usize] += 1;
    }
    let test = chi_square_gof(&counts, &probs).unwrap();
    assert!(test.p_value > 0.01, "{test:?} for {counts:?}");
}

#[test]
fn instance_json_round_trip() {
    for kind in [MarketKind::Additive, MarketKind::Coverage, MarketKind::Concave] {
        let generated = gen_large_market(kind, 64, 8, CostModel::Uniform, 2.0, &mut trial_rng(5, 0)).unwrap();
        let json = generated.instance.to_json().unwrap();
        let back = Instance::from_json(&json).unwrap();
        assert_eq!(back.to_json().unwrap(), json);
        let all: Vec<usize> = (0..64).collect();
        assert_eq!(back.valuation().value(&all).unwrap(), generated.instance.valuation().value(&all).unwrap());
    }
}

#[test]
fn max_is_learned_a_third_of_the_time() {
    // A unique maximum lands in the one-third sample with probability 1/3.
    let n = 300;
    let values: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7) % n) as f64).collect();
    let instance = Instance::new(Valuation::additive(values).unwrap(), vec![0.1; n], 1.0).unwrap();
    let vmax = instance.market().vmax();
    let trials = 5000;
    let hits = (0..trials)
        .filter(|&t| {
            let mut rng = trial_rng(17, t);
            let stream = ArrivalStream::random(n, &mut rng);
            let mut state = MechanismState::new(instance.market(), instance.costs(), stream);
            learning_max_value(&mut state, &mut rng).unwrap().estimate == vmax
        })
        .count();
    let freq = hits as f64 / trials as f64;
    let sigma = (1.0 / 3.0 * 2.0 / 3.0 / trials as f64).sqrt();
    assert!((freq - 1.0 / 3.0).abs() < 4.0 * sigma, "{freq}");
    assert!(freq >= 0.30);
}

fn config() -> ExperimentConfig {
    ExperimentConfig {
        family: Family::LargeMarket {
            market: MarketKind::Additive,
            n: 4096,
            k_target: 1024,
            cost_model: CostModel::UniformRandom,
            budget: 1.0,
        },
        mechanism: MechanismChoice::PostedPrices,
        profile: ProfileSpec::Named("desk".into()),
        trials: 40,
        master_seed: 8,
        outputs: Outputs::default(),
        events: false,
    }
}

#[test]
fn audits_catch_an_overpaying_mechanism() {
    let honest = run_experiment(&config()).unwrap();
    assert!(honest.summary.passed);
    let epsilon = 1e-6;
    let cheat = |instance: &Instance, _opt: f64, profile: &ConstantsProfile, rng: &mut _| {
        let mut run = posted_prices(instance.market(), instance.costs(), profile, rng);
        if let Some(offer) = run.ledger.iter_mut().find(|r| r.accepted) {
            offer.price += epsilon;
            run.payments += epsilon;
        }
        run
    };
    let mutant = run_experiment_with(&config(), &cheat).unwrap();
    assert!(!mutant.summary.passed);
    assert!(mutant.summary.linear_form_violations > 0);
}

#[test]
fn audits_catch_a_budget_breach() {
    let cheat = |instance: &Instance, _opt: f64, profile: &ConstantsProfile, rng: &mut _| {
        let mut run = posted_prices(instance.market(), instance.costs(), profile, rng);
        run.payments = instance.budget() * 1.01;
        run
    };
    let mutant = run_experiment_with(&config(), &cheat).unwrap();
    assert_eq!(mutant.summary.budget_violations, mutant.summary.trials);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| run_experiment(&config()).unwrap());
    let b = four.install(|| run_experiment(&config()).unwrap());
    assert_eq!(a.records, b.records);
}
