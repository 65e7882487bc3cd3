//! Deterministic seed derivation.
//!
//! All randomness in a run flows from a single root seed. Subsystems that
//! need independent streams (per-epoch shuffles, per-entity negative
//! sampling, per-case candidate draws) derive child seeds with [`mix`], so
//! two runs with the same root seed replay bit-for-bit.

/// Derives a child seed from a base seed and a salt.
///
/// Uses the splitmix64 finalizer, which maps distinct (base, salt) pairs to
/// well-scattered outputs. Pure and platform-independent.
pub fn mix(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
