//! Deterministic seed derivation.

/// One round of SplitMix64 finalization.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for item `index` of a stream rooted at `parent`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    mix(mix(parent) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Child seed for a named sub-stream.
pub fn derive_named(parent: u64, name: &str) -> u64 {
    name.bytes().fold(mix(parent), |acc, b| mix(acc ^ b as u64))
}
