//! Small numeric helpers shared by curation, metrics and synth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere. ChaCha8 is seedable from a `u64` and its
/// stream does not depend on the platform.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a stage-specific seed from the run seed and a tag.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then mixed with the seed.
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(seed ^ splitmix64(h))
}

pub fn rng_for(seed: u64, tag: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tag))
}

/// 1-based nearest rank `ceil(P/100 · n)`, at least 1.
pub fn nearest_rank(percentile: f64, n: usize) -> usize {
    let r = (percentile / 100.0 * n as f64).ceil() as usize;
    r.clamp(1, n.max(1))
}

/// Nearest-rank percentile of an ascending slice. P=50 gives the lower
/// median for even lengths.
pub fn percentile_sorted(sorted: &[f64], percentile: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    Some(sorted[nearest_rank(percentile, sorted.len()) - 1])
}

/// Nearest-rank percentile of unsorted values.
pub fn percentile(values: &[f64], percentile: f64) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, percentile)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}
