//! Output helpers shared by the exporters.

use std::io::Write;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Formats a float with 9 significant digits for CSV columns.
pub fn sig9(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        x.to_string()
    }
}

/// Writes one JSON value per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, rows: &[T]) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and two indices.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    mix(mix(mix(base) ^ a) ^ b.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

const EVAL_BIT: u64 = 1 << 63;

/// Environment seed for training episodes (top bit clear).
pub fn train_env_seed(base: u64, env: u64, episode: u64) -> u64 {
    derive_seed(base, env, episode) & !EVAL_BIT
}

/// Environment seed for evaluation episodes (top bit set), disjoint from
/// every [`train_env_seed`].
pub fn eval_env_seed(base: u64, episode: u64) -> u64 {
    derive_seed(base ^ 0x5EED_E7A1, episode, u64::MAX) | EVAL_BIT
}
