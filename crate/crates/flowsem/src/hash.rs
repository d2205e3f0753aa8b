//! Small hashing utilities shared across the pipeline: CRC32 for record
//! integrity, splitmix64 for seed derivation, and SHA-256 digests for
//! schema/checkpoint identity.

use sha2::{Digest, Sha256};

/// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320), as used by the
/// dataset and checkpoint record checksums.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

/// splitmix64 finalizer; the workhorse for deriving sub-seeds and stable ids.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a sequence of words into one 64-bit value. Order-sensitive.
pub fn mix64(words: &[u64]) -> u64 {
    let mut acc = 0x243F_6A88_85A3_08D3u64; // arbitrary non-zero start
    for &w in words {
        acc = splitmix64(acc ^ w);
    }
    acc
}

/// SHA-256 digest, used for schema identity and frozen-encoder checks.
pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().into()
}

pub fn hex32(digest: &[u8; 32]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
