//! Stable, seeded string hashing used for feature bucketing.
//!
//! `std`'s hashers are not guaranteed stable across releases, so persisted models
//! would silently change meaning. FNV-1a with a splitmix64 finalizer is fixed forever.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn hash_str(seed: u64, s: &str) -> u64 {
    let mut h = FNV_OFFSET ^ splitmix64(seed);
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h)
}

/// Bucket index in `0..buckets`.
pub fn bucket(seed: u64, s: &str, buckets: usize) -> usize {
    debug_assert!(buckets > 0);
    (hash_str(seed, s) % buckets as u64) as usize
}
