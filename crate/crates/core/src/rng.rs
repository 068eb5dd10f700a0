//! Counter-based random streams.
//!
//! Every path gets three independent ChaCha20 streams, one per noise channel,
//! addressed by `(master seed, path index, channel)`. A path can be re-drawn in
//! isolation without touching any other path, and channels never share words.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Channel {
    Brownian = 0,
    Poisson = 1,
    Chain = 2,
}

const CHANNELS_PER_PATH: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey {
    pub master_seed: u64,
    pub path_index: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        assert!(path_index < u64::MAX / CHANNELS_PER_PATH, "path index {path_index} too large");
        Self { master_seed, path_index }
    }

    pub fn rng(&self, channel: Channel) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.path_index * CHANNELS_PER_PATH + channel as u64);
        rng
    }
}
