//! Counter-based per-path random streams.
//!
//! Every draw in a simulation is addressed by (master seed, path index,
//! stream). Seeds are derived statelessly with splitmix64, so paths can be
//! generated in any order and on any number of workers with identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Independent randomness lanes within one path.
///
/// The impulse draws must be independent of the Brownian and Poisson lanes,
/// so each lane gets its own generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Chain,
    Wiener,
    LevyJump,
    Impulse,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Chain => 0x43_48_41_49,
            Stream::Wiener => 0x57_49_45_4e,
            Stream::LevyJump => 0x4c_45_56_59,
            Stream::Impulse => 0x49_4d_50_55,
        }
    }
}

/// One splitmix64 step (public-domain constants).
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for (master seed, path index, stream).
pub fn path_rng(master_seed: u64, path_index: u64, stream: Stream) -> ChaCha12Rng {
    let mut state = master_seed;
    let a = splitmix64(&mut state);
    let mut state = a ^ path_index.wrapping_mul(0xA24B_AED4_963E_E407);
    let b = splitmix64(&mut state);
    let mut state = b ^ stream.tag().wrapping_mul(0x9FB2_1C65_1E98_DF25);

    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(seed)
}

/// Generator for a bare 64-bit seed (single-path entry points).
pub fn seed_rng(seed: u64) -> ChaCha12Rng {
    path_rng(seed, 0, Stream::Chain)
}
