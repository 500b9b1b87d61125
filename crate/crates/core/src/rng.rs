//! Seed derivation and the small sampling helpers shared by the engine and
//! the protocols.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for run `index` of a sweep driven by `master`.
/// Depends only on `(master, index)`, never on scheduling order.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix(master ^ mix(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// Generator for one logical random stream of a seeded run.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform on (0, 1].
pub fn unit_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Number of failures before the first success of a Bernoulli(`p`) process.
/// Returns `u64::MAX` when `p` is zero.
pub fn geometric_skip<R: Rng + ?Sized>(rng: &mut R, p: f64) -> u64 {
    if p >= 1.0 {
        return 0;
    }
    if !(p > 0.0) {
        return u64::MAX;
    }
    let skip = unit_open(rng).ln() / (-p).ln_1p();
    if skip >= u64::MAX as f64 {
        u64::MAX
    } else {
        skip.floor() as u64
    }
}
