//! Seed derivation for reproducible parallel simulation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for replicate `stream` of a run seeded with `seed`.
///
/// Each replicate gets its own ChaCha stream, so results depend only on
/// `(seed, stream)` and never on which worker ran the replicate.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Parses a 64-bit seed written in decimal or with a `0x` hex prefix.
pub fn parse_seed(text: &str) -> Result<u64, String> {
    let t = text.trim();
    let parsed = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => t.parse::<u64>(),
    };
    parsed.map_err(|e| format!("invalid seed {text:?}: {e}"))
}
