//! Seeded, splittable random streams.
//!
//! Every consumer of randomness (an observation, a bootstrap replication, a
//! Monte Carlo replication) gets its own ChaCha8 stream, addressed by a
//! `(domain, index)` path under the root seed. Results therefore do not
//! depend on the order in which parallel workers run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains.
pub mod domain {
    pub const DATA: u64 = 0x6461_7461;
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
    pub const REPLICATION: u64 = 0x7265_706c;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream for `(domain, index)`.
    pub fn derive(&self, domain: u64, index: u64) -> SeedStream {
        let mixed = splitmix64(self.seed ^ splitmix64(domain.wrapping_add(splitmix64(index))));
        SeedStream { seed: mixed }
    }

    /// Generator for substream `stream` of this seed.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}
