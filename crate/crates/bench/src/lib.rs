//! Shared inputs for the benchmarks.

use spatial_sdr::fit::ModelKind;
use spatial_sdr::simulate::{simulate_replication, SimConfig};
use spatial_sdr::SpatialSample;

/// Training part of one simulated replication with `n` points and `p`
/// predictors (polynomial degree 2, rank 2).
pub fn training_sample(model: ModelKind, n: usize, p: usize) -> SpatialSample {
    let cfg = SimConfig {
        n,
        p,
        reps: 1,
        ..SimConfig::new(model, 42)
    };
    simulate_replication(&cfg, 0).expect("valid config").train_sample()
}
