use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded counter-based random source. Child streams are keyed by a path
/// string, so each component's draws are independent of how much any other
/// component consumed.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    path_key: u64,
    stream: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState::keyed(seed, 0)
    }

    fn keyed(seed: u64, path_key: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&path_key.to_le_bytes());
        RngState {
            seed,
            path_key,
            stream: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for `path`, derived from this stream's key (not
    /// from its current position).
    pub fn child(&self, path: &str) -> RngState {
        let mut h = splitmix(self.path_key ^ 0x6d65_6774_5f72_6e67);
        for b in path.bytes() {
            h = splitmix(h ^ u64::from(b));
        }
        RngState::keyed(self.seed, h)
    }

    pub fn stream(&mut self) -> &mut ChaCha8Rng {
        &mut self.stream
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
