//! Proxy-based distance metric learning.
//!
//! An embedding model and a small set of learnable proxy vectors are trained
//! jointly: every anchor is compared against its own proxy (positive) and all
//! remaining proxies (negatives) instead of sampled data triplets. The crate
//! also carries the instance-based baselines (NCA, margin triplet with
//! semi-hard mining), zero-shot evaluation (Recall@K, k-means + NMI) and
//! numerical audits of the proxy upper-bound inequalities.
//!
//! All arithmetic is `f64`.

pub mod bounds;
pub mod checkpoint;
pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod losses;
pub mod optim;
pub mod proxies;
pub mod trainer;

pub use error::{Error, Result};

/// Deterministic RNG used everywhere a seed is accepted.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub(crate) fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
