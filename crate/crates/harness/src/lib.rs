//! Experiment orchestration for Packed-Ensembles: datasets, configuration, training,
//! evaluation, ablation sweeps and reports.

pub mod ablate;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod idx;
pub mod report;
pub mod synth;
pub mod train;

pub use error::{HarnessError, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator every seeded harness component draws from.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
