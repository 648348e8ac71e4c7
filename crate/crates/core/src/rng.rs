//! One seeded generator per run, split into independent streams per module,
//! so the order in which stages run never perturbs another stage's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers. Values are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Pseudolabel = 1,
    Folds = 2,
    Pipeline = 3,
    Synthetic = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Stream with an additional per-call word (e.g. a training step) mixed into the seed.
pub fn substream_rng(seed: u64, stream: Stream, word: u64) -> ChaCha8Rng {
    let mixed = seed ^ word.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(stream as u64);
    rng
}
