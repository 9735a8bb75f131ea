//! Deterministic random substreams.
//!
//! Every random draw in the crate comes from a generator keyed by
//! `(seed, stream, index)`, so trial `i` of a run is the same no matter how
//! many trials are generated before it or on which thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags keep unrelated consumers of the same seed apart.
pub mod stream {
    pub const TRAIN_TRIALS: u64 = 1;
    pub const EVAL_TRIALS: u64 = 2;
    pub const TASKMODEL_TRIALS: u64 = 3;
    pub const INIT: u64 = 4;
    pub const RNN_NOISE: u64 = 5;
    pub const INPUT_NOISE: u64 = 6;
    pub const AUX_TRIALS: u64 = 7;
    pub const REFERENCE: u64 = 8;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the `index`-th item of `stream` under `seed`.
pub fn substream(seed: u64, stream: u64, index: u64) -> Rng {
    let mut state = seed ^ stream.rotate_left(21) ^ index.rotate_left(42);
    // mix the three keys separately so nearby tuples do not collide
    let mut key = [0u8; 32];
    let a = splitmix64(&mut state) ^ seed;
    let b = splitmix64(&mut state) ^ stream;
    let c = splitmix64(&mut state) ^ index;
    let mut st2 = a ^ b.rotate_left(17) ^ c.rotate_left(34);
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut st2).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
