use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer, used to derive independent seeds and stream ids.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for cell `index` of a sweep started from `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x5EED)))
}

/// Counter-based random source.
///
/// Every consumer asks for a stream keyed by what it is simulating (address,
/// bit plane, refresh epoch, ...), so results do not depend on the order in
/// which streams are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SimRng {
    seed: u64,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, key: &[u64]) -> ChaCha8Rng {
        let id = key
            .iter()
            .fold(splitmix64(0xC0FFEE), |h, k| splitmix64(h ^ k.wrapping_mul(0x2545_F491_4F6C_DD1D)));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }
}
