//! Seeded random streams.
//!
//! All stochastic choices in the pipeline (mask sampling, shuffles, parameter
//! init, synthetic corpora) draw from ChaCha8 streams derived from a run seed
//! plus a tag path, so identical seeds yield identical results on any
//! platform, and parallel workers can be given independent streams without
//! sharing state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::hash::{mix64, splitmix64};

/// A deterministic stream for the given seed.
pub fn stream(seed: u64) -> ChaCha8Rng {
    from_word(splitmix64(seed))
}

/// A deterministic sub-stream; `tags` identifies the consumer, e.g.
/// `substream(seed, &[epoch, flow_id])` for per-flow mask sampling.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut words = Vec::with_capacity(tags.len() + 1);
    words.push(seed);
    words.extend_from_slice(tags);
    from_word(mix64(&words))
}

fn from_word(word: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut x = word;
    for chunk in key.chunks_mut(8) {
        x = splitmix64(x);
        chunk.copy_from_slice(&x.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
