//! Deterministic, splittable random streams.
//!
//! A stream is identified by a master seed plus a path of integers
//! (e.g. `[scenario, n, level, replicate]`). Streams for distinct paths are
//! statistically independent, so work can be scheduled in any order or in
//! parallel without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Tags that keep the sub-stream families of different consumers apart.
pub mod tag {
    pub const COVARIATES: u64 = 0x636f_7661;
    pub const RESPONSES: u64 = 0x7265_7370;
    pub const RANDOMIZATION: u64 = 0x7261_6e64;
    pub const REPLICATE: u64 = 0x7265_706c;
    pub const SIMULATION: u64 = 0x7369_6d75;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a path.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut state = seed;
    let mut out = splitmix64(&mut state);
    for &p in path {
        state ^= out.rotate_left(17) ^ p.wrapping_mul(0xd6e8_feb8_6659_fd93);
        out = splitmix64(&mut state);
    }
    out
}

/// Open the stream identified by `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> Stream {
    let mut state = derive_seed(seed, path);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Uniform draw on the open interval (0, 1); exact 0 is rejected.
pub fn open_unit<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 && u < 1.0 {
            return u;
        }
    }
}
