//! Named random sub-streams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the stream name; stable across platforms and releases.
fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Deterministic generator for `(seed, name)`. Distinct names give
/// independent ChaCha streams under the same key.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    fn draw(name: &str) -> Vec<u64> {
        let mut r = stream(7, name);
        (0..4).map(|_| r.gen()).collect()
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        assert_eq!(draw("init"), draw("init"));
        assert_ne!(draw("init"), draw("dropout"));
    }
}
