//! Shared fixtures for the criterion benchmarks.

use glod_core::hierarchy::build_hierarchy;
use glod_core::hspt::{build_hspt, default_size_threshold};
use glod_core::synthetic::random_leaves;
use glod_core::{Hierarchy, Hspt, LodConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random scene of `n` leaves in `[-50, 50]³` with its HSPT.
pub fn scene(n: usize, seed: u64) -> (Hierarchy, Hspt) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = build_hierarchy(random_leaves(&mut rng, n, 50.0)).expect("non-empty scene");
    let hspt = build_hspt(&h, default_size_threshold(&h), 32, &LodConfig::default()).expect("valid parameters");
    (h, hspt)
}
