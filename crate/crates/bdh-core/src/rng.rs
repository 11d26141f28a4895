//! Seeded RNG construction, shared by every component that randomizes.
//!
//! ChaCha8 keeps streams identical across platforms and library versions,
//! which the reproducibility contract of the CLI depends on.

use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream from a base seed and a stream index.
pub fn substream(seed: u64, index: u64) -> SeededRng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
