//! Deterministic per-trial random streams.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as TrialRng;

/// RNG for trial `index` of an experiment seeded with `master`.
///
/// Every trial gets its own ChaCha stream, so results do not depend on how
/// trials are scheduled across threads.
pub fn trial_rng(master: u64, index: u64) -> TrialRng {
    let mut rng = TrialRng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Stream reserved for instance generation, disjoint from trial streams.
pub fn generator_rng(master: u64) -> TrialRng {
    trial_rng(master, u64::MAX)
}
