//! Learning vector representations from multi-worker crowdsourced binary labels.
//!
//! The pipeline computes a temporal-aware confidence score per worker and
//! sample from each worker's short-term labeling memory, aggregates the
//! scores across workers, and trains a small feed-forward encoder with a
//! confidence-weighted group softmax metric-learning loss. Truth-inference
//! baselines (majority vote, confusion-matrix EM), a synthetic annotator
//! simulator, and an evaluation suite are included.

pub mod cli;
pub mod confidence;
pub mod dataset;
pub mod dml;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod synth;
pub mod truth;

pub use error::{Error, Result};

/// Derives an independent stream seed from a master seed and a stream index.
///
/// SplitMix64 finalizer over `master + index`. Every piece of randomness in
/// the crate (worker simulation, weight init, group sampling, dropout) draws
/// from a ChaCha generator seeded through this function, so whole runs are a
/// pure function of the configured master seeds.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
