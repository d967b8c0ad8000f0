//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, index)`: the seed names a run (or a
//! replication), the index names an iteration or a Monte-Carlo sample. The
//! resulting generator is independent of how work is split across threads.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for the `index`-th substream.
    pub fn substream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// A child stream with a derived seed, for replications or auxiliary draws.
    pub fn child(&self, tag: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x9E37_79B9_7F4A_7C15))))
    }
}

/// Standard-normal vector of length `d`.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
