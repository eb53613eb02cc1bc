use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for a `(seed, stream, index)` triple.
pub(crate) fn stream(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let s = mix(mix(mix(seed) ^ stream) ^ index);
    ChaCha8Rng::seed_from_u64(s)
}

pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_SAMPLE: u64 = 2;
pub(crate) const STREAM_VAL: u64 = 3;
pub(crate) const STREAM_SHUFFLE: u64 = 4;
pub(crate) const STREAM_PAGE: u64 = 5;
pub(crate) const STREAM_REPORT: u64 = 6;
pub(crate) const STREAM_TRAIN_EVAL: u64 = 7;
