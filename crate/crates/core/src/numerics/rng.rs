//! Seeded randomness. All stochastic code draws from xoshiro256++ seeded
//! through SplitMix64, so a `u64` seed pins every byte a run produces.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// One SplitMix64 step; used to derive independent child seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child generator for `(seed, stream)`; distinct streams are decorrelated.
pub fn substream(seed: u64, stream: u64) -> Rng {
    seeded(splitmix64(seed ^ splitmix64(stream)))
}
