//! Counter-based random streams.
//!
//! Every random draw in the simulator comes from a stream addressed by
//! `(seed, purpose, a, b)`, e.g. `(seed, Quantize, t, j)` for worker `j` in
//! iteration `t`. Streams are independent of one another and of the order in
//! which they are opened, so per-worker work can run in any order (or in
//! parallel) without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share key material.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    Init = 2,
    Assign = 3,
    Straggler = 4,
    Quantize = 5,
    Subset = 6,
    Oracle = 7,
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Open the stream for `(seed, purpose, a, b)`.
pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> Stream {
    let mut state = seed;
    for word in [purpose as u64, a, b] {
        let mut w = word;
        state = splitmix64(&mut state) ^ splitmix64(&mut w);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
