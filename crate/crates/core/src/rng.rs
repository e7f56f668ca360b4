//! Deterministic, resumable random number streams.
//!
//! Every source of randomness in a run is a named ChaCha12 stream derived
//! from one master seed, so the data sampler, dropout masks, discriminator
//! noise, and weight initialization never interleave. A stream's state is
//! `(seed, word position)`; capturing and restoring it lets a checkpointed
//! run resume bit-exactly mid-epoch.

use alloc::string::String;
use alloc::vec::Vec;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Derive a 256-bit stream seed from the master seed and a stream label
/// (FNV-1a over the seed bytes and label, once per 64-bit word with distinct
/// offsets).
fn derive_seed(master: u64, label: &str) -> [u8; 32] {
    let mut out = [0u8; 32];
    for (i, chunk) in out.chunks_mut(8).enumerate() {
        let mut h = 0xcbf2_9ce4_8422_2325u64 ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut eat = |byte: u8| {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for b in master.to_le_bytes() {
            eat(b);
        }
        for b in label.bytes() {
            eat(b);
        }
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    out
}

/// A named stream seeded from the master seed.
pub fn stream_from(master: u64, label: &str) -> ChaCha12Rng {
    ChaCha12Rng::from_seed(derive_seed(master, label))
}

/// Serializable position of one stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamState {
    pub seed: [u8; 32],
    pub word_pos: u128,
}

impl StreamState {
    pub fn capture(rng: &ChaCha12Rng) -> StreamState {
        StreamState { seed: rng.get_seed(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::from_seed(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// The streams a training run consumes, in checkpoint order.
pub struct RngStreams {
    /// Batch sampling and synthetic texture parameters.
    pub data: ChaCha12Rng,
    /// Attention dropout masks.
    pub dropout: ChaCha12Rng,
    /// Discriminator input noise.
    pub noise: ChaCha12Rng,
}

impl RngStreams {
    pub fn new(master: u64) -> RngStreams {
        RngStreams {
            data: stream_from(master, "data"),
            dropout: stream_from(master, "dropout"),
            noise: stream_from(master, "noise"),
        }
    }

    /// States in a fixed order (data, dropout, noise) for checkpointing.
    pub fn capture(&self) -> Vec<StreamState> {
        alloc::vec![
            StreamState::capture(&self.data),
            StreamState::capture(&self.dropout),
            StreamState::capture(&self.noise),
        ]
    }

    pub fn restore(states: &[StreamState]) -> crate::Result<RngStreams> {
        if states.len() != 3 {
            return Err(crate::Error::Config(String::from(
                "expected 3 rng stream states (data, dropout, noise)",
            )));
        }
        Ok(RngStreams {
            data: states[0].restore(),
            dropout: states[1].restore(),
            noise: states[2].restore(),
        })
    }
}
