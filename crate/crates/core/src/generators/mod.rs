//! Seeded dataset generators and CNF handling.
//!
//! Every sampler draws from `ChaCha8Rng::seed_from_u64(seed)` and converts
//! raw draws to `[0, 1)` with the 53-bit mantissa mapping of
//! `rand::distributions::Standard`, so a seed pins the exact bit pattern of
//! every generated graph.

mod cnf;
mod fixing;
mod ising;
mod random;
mod sbm;

pub use cnf::{cnf_to_factor_graph, parse_dimacs, random_k_cnf, CnfFormula};
pub use fixing::{fix_variable, marginals_from_partitions};
pub use ising::{sample_ising, IsingSpec};
pub use random::{random_factor_graph, random_tree, RandomGraphSpec};
pub use sbm::{build_sbm_factor_graph, SbmSample, SbmSpec, SBM_EDGE_PROB_CLAMP};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator behind every seeded sampler in the crate.
pub type SeedRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}
