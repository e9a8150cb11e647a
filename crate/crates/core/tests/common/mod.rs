#![allow(dead_code)]

use spatial_sdr::fit::ModelKind;
use spatial_sdr::simulate::{simulate_replication, SimConfig};
use spatial_sdr::SpatialSample;

/// A simulated sample of `n` points with `p` predictors, degree-`r`
/// polynomial signal of rank `d`, and errors from `model`.
pub fn simulated(model: ModelKind, seed: u64, n: usize, p: usize, r: usize, d: usize) -> SpatialSample {
    let cfg = SimConfig {
        n,
        p,
        r,
        d,
        reps: 1,
        ..SimConfig::new(model, seed)
    };
    simulate_replication(&cfg, 0).unwrap().sample
}
