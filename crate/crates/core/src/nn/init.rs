//! Seeded parameter initialization. All randomness in the crate flows
//! through ChaCha12 so runs with the same seed are bit-identical.

use super::tensor::Tensor;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Rng = ChaCha12Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Derives an independent stream from a base seed and a component tag, so
/// adding a component never shifts another component's stream.
pub fn mix_seed(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, folded into the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in tag.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape, data)
}
