//! Deterministic random streams.
//!
//! Every source of randomness in a run is a substream derived from the
//! master seed plus a stable label (entity kind, entity id, round).
//! Substreams make results independent of execution order: a cluster
//! draws the same numbers whether it runs first, last, or in parallel.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Entity-kind labels used for substream derivation across the crate.
pub mod kind {
    pub const INIT: &str = "init";
    pub const SHARD: &str = "shard";
    pub const SAMPLE: &str = "sample";
    pub const SHARE: &str = "share";
    pub const TRIPLE: &str = "triple";
    pub const BATCH: &str = "batch";
    pub const ATTACK: &str = "attack";
    pub const TRIM: &str = "trim";
    pub const SYNTH: &str = "synth";
    pub const ROOT: &str = "root";
}

/// FNV-1a over a byte slice. Stable across platforms and releases, unlike
/// the std hasher.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// SplitMix64 step; used to expand a 64-bit hash into a 256-bit seed.
pub fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn derive_seed(master: u64, kind: &str, id: u64, round: u64) -> [u8; 32] {
    let mut bytes = Vec::with_capacity(kind.len() + 24);
    bytes.extend_from_slice(&master.to_le_bytes());
    bytes.extend_from_slice(kind.as_bytes());
    bytes.extend_from_slice(&id.to_le_bytes());
    bytes.extend_from_slice(&round.to_le_bytes());
    let mut state = fnv1a(&bytes);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    seed
}

/// Substream for (master seed, entity kind, entity id, round).
pub fn substream(master: u64, kind: &str, id: u64, round: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master, kind, id, round))
}
