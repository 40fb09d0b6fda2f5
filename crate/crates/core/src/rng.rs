//! Seeded random streams. Every stochastic component draws from a ChaCha
//! stream derived from (seed, epoch, batch), so parallel and sequential
//! schedules see identical randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn seed_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for one (epoch, batch) cell of a training run.
pub fn batch_rng(seed: u64, epoch: u64, batch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch + 1) << 32) ^ (batch + 1));
    rng
}

/// Stream reserved for parameter initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xF0F0_F0F0);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = batch_rng(7, 3, 5);
        let mut b = batch_rng(7, 3, 5);
        assert_eq!(a.next_u64(), b.next_u64());
        let mut c = batch_rng(7, 3, 6);
        let mut d = batch_rng(7, 4, 5);
        let x = batch_rng(7, 3, 5).next_u64();
        assert_ne!(x, c.next_u64());
        assert_ne!(x, d.next_u64());
    }
}
