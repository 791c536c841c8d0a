//! Named, derived random streams.
//!
//! Every random draw in a run flows from a single root seed. Subsystems ask
//! for a stream by label plus an index path, so adding a new consumer never
//! perturbs the draws seen by an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Stream = ChaCha12Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Derives a child seed from `root`, a label and an index path.
pub fn derive_seed(root: u64, label: &str, path: &[u64]) -> u64 {
    let mut h = splitmix64(root ^ label_hash(label));
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

pub fn stream(root: u64, label: &str, path: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_seed(root, label, path))
}

pub fn seeded(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}
