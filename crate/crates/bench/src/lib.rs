//! Shared fixtures for the criterion benchmarks.

use procure_core::instance::{gen_large_market, CostModel, MarketKind};
use procure_core::rng::generator_rng;
use procure_core::Instance;

/// Unit-value additive market with `OPT = k` and uniform costs `B/k`.
pub fn uniform_market(n: usize, k: usize) -> Instance {
    gen_large_market(MarketKind::Additive, n, k, CostModel::Uniform, 1.0, &mut generator_rng(0))
        .expect("valid fixture parameters")
        .instance
}

/// Coverage market with `k` disjoint blocks hidden among decoys.
pub fn coverage_market(n: usize, k: usize) -> Instance {
    gen_large_market(MarketKind::Coverage, n, k, CostModel::Uniform, 1.0, &mut generator_rng(1))
        .expect("valid fixture parameters")
        .instance
}
