//! Per-path random streams: path `i` always draws from stream `i` of the
//! ChaCha8 generator keyed by the run seed, whatever thread runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Stream indices at or above this value are reserved for auxiliary draws
/// (resampling, shuffles) so they never collide with path streams.
pub const AUX_STREAM_BASE: u64 = 1 << 62;
