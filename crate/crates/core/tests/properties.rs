use proptest::prelude::*;
use procure_core::arrival::ArrivalStream;
use procure_core::harness::audit_run;
use procure_core::mechanisms::{linear_pricing_fixed, lm_mechanism, posted_prices};
use procure_core::prediction::{prediction_mechanism, PredictionConfig};
use procure_core::rng::trial_rng;
use procure_core::{ConstantsProfile, Instance, Valuation};

fn coverage_valuation() -> impl Strategy<Value = Valuation> {
    (4usize..24).prop_flat_map(|universe| {
        prop::collection::vec(prop::collection::vec(0..universe as u32, 1..6), 1..12)
            .prop_map(move |sets| Valuation::coverage(universe, sets).unwrap())
    })
}

fn additive_instance() -> impl Strategy<Value = Instance> {
    (8usize..200).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..2.0, n),
            prop::collection::vec(0.001f64..0.5, n),
            0.1f64..3.0,
        )
            .prop_map(|(weights, costs, budget)| Instance::new(Valuation::additive(weights).unwrap(), costs, budget).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn value_ignores_order(valuation in coverage_valuation(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut set: Vec<usize> = (0..valuation.len()).filter(|i| (seed >> (i % 64)) & 1 == 1).collect();
        let forward = valuation.value(&set).unwrap();
        set.shuffle(&mut trial_rng(seed, 0));
        prop_assert_eq!(valuation.value(&set).unwrap(), forward);
    }

    #[test]
    fn marginals_diminish(valuation in coverage_valuation(), small in any::<u16>(), extra in any::<u16>()) {
        let n = valuation.len();
        let base: Vec<usize> = (0..n).filter(|i| (small >> (i % 16)) & 1 == 1).collect();
        let bigger: Vec<usize> = (0..n).filter(|i| base.contains(i) || (extra >> (i % 16)) & 1 == 1).collect();
        for agent in (0..n).filter(|a| !bigger.contains(a)) {
            let lo = valuation.marginal(&base, agent).unwrap();
            let hi = valuation.marginal(&bigger, agent).unwrap();
            prop_assert!(lo + 1e-12 >= hi, "agent {}: {} < {}", agent, lo, hi);
        }
    }

    #[test]
    fn mechanisms_stay_within_budget(instance in additive_instance(), seed in any::<u64>(), ratio in 0.01f64..4.0) {
        let profile = ConstantsProfile::desk();
        let (market, costs) = (instance.market(), instance.costs());
        let mut rng = trial_rng(seed, 1);
        let opt_guess = market.valuation().value(&(0..instance.n()).collect::<Vec<_>>()).unwrap().max(1e-9);
        let stream = ArrivalStream::random(instance.n(), &mut rng);
        let runs = [
            lm_mechanism(market, costs, &profile, &mut rng),
            posted_prices(market, costs, &profile, &mut rng),
            linear_pricing_fixed(market, costs, stream, ratio * opt_guess),
        ];
        for run in &runs {
            let report = audit_run(&instance, run);
            prop_assert!(report.passed(), "{:?}", report);
            prop_assert!(run.payments <= instance.budget() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn prediction_walk_moves_by_one(instance in additive_instance(), seed in any::<u64>(), log_ratio in -12i32..12) {
        let profile = ConstantsProfile::desk();
        let predicted = f64::from(log_ratio).exp2() * instance.valuation().vmax().max(1e-6) * 4.0;
        let config = PredictionConfig::with_defaults(predicted, instance.n());
        let run = prediction_mechanism(instance.market(), instance.costs(), &config, &profile, &mut trial_rng(seed, 2));
        let walk = run.walk.as_ref().expect("prediction runs carry a walk");
        prop_assert!(walk.is_consistent(), "{:?}", walk);
        prop_assert!(walk.hits.len() <= config.rounds_per_phase);
        prop_assert!(audit_run(&instance, &run).passed());
    }
}
