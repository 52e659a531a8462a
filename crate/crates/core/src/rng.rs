//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by the
//! run seed. Independent consumers (per-component initialization, batch
//! sampling, rollouts) get their own stream id so the draws one consumer sees
//! never depend on how many draws another consumer made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags for [`substream`]. The tag occupies the upper 32 bits of the
/// ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Stream {
    ExpertInit = 1,
    GatingInit = 2,
    Batches = 3,
    Generator = 4,
    Rollout = 5,
    Jitter = 6,
}

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` of purpose `purpose` under `seed`.
pub fn substream(seed: u64, purpose: Stream, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | (index & 0xffff_ffff));
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn draws(mut rng: Rng, n: usize) -> Vec<u64> {
        (0..n).map(|_| rng.random::<u64>()).collect()
    }

    #[test]
    fn same_seed_same_stream() {
        assert_eq!(draws(seeded_rng(0), 100), draws(seeded_rng(0), 100));
    }

    #[test]
    fn different_seeds_differ() {
        assert_ne!(draws(seeded_rng(0), 1), draws(seeded_rng(1), 1));
    }

    #[test]
    fn substreams_do_not_depend_on_consumption_order() {
        let forward: Vec<Vec<u64>> = (0..4)
            .map(|k| draws(substream(7, Stream::ExpertInit, k), 16))
            .collect();
        let mut backward: Vec<Vec<u64>> = (0..4)
            .rev()
            .map(|k| draws(substream(7, Stream::ExpertInit, k), 16))
            .collect();
        backward.reverse();
        assert_eq!(forward, backward);
        // distinct streams actually differ
        assert_ne!(forward[0], forward[1]);
        assert_ne!(
            draws(substream(7, Stream::ExpertInit, 0), 4),
            draws(substream(7, Stream::GatingInit, 0), 4)
        );
    }
}
