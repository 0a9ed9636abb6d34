//! Reproducible sub-seed derivation, independent of thread scheduling.

/// Mixes `seed` with a string tag (e.g. a wall id) into a new 64-bit seed.
/// Uses FNV-1a over the tag followed by a splitmix64 finalizer, so results
/// are stable across platforms and compiler versions.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

pub fn derive_seed_n(seed: u64, n: u64) -> u64 {
    splitmix64(seed ^ splitmix64(n.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
