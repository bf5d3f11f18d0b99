//! Counter-based Gaussian noise.
//!
//! Every draw is addressed by `(seed, substream, channel, step, id)`. The
//! ChaCha key is derived from `(seed, substream, channel)`, the ChaCha stream
//! number is the step index and the word position is the particle id, so any
//! draw can be regenerated without replaying earlier ones.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Channel carrying the synchronous (or uncoupled) Brownian increment.
pub const CHANNEL_SYNC: u32 = 0;
/// Channel carrying the reflected Brownian increment.
pub const CHANNEL_REFLECT: u32 = 1;
/// Channel reserved for law-proxy ensembles.
pub const CHANNEL_PROXY: u32 = 2;
/// Channel reserved for drawing initial conditions.
pub const CHANNEL_INIT: u32 = 3;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Source of standard normal pairs for one `(seed, substream)` lane.
#[derive(Clone, Debug)]
pub struct NoiseSource {
    seed: u64,
    substream: u64,
    dim: usize,
}

impl NoiseSource {
    pub fn new(seed: u64, substream: u64, dim: usize) -> Self {
        NoiseSource { seed, substream, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn substream(&self) -> u64 {
        self.substream
    }

    fn rng(&self, channel: u32, step: u64) -> ChaCha8Rng {
        let mut s = self.seed ^ 0x6A09_E667_F3BC_C908;
        let mut key = [0u8; 32];
        let words = [
            splitmix64(&mut s) ^ self.substream.wrapping_mul(0xD6E8_FEB8_6659_FD93),
            splitmix64(&mut s) ^ (channel as u64).wrapping_mul(0xA076_1D64_78BD_642F),
            splitmix64(&mut s),
            splitmix64(&mut s),
        ];
        let mut t = words[0] ^ words[1].rotate_left(17);
        for (i, chunk) in key.chunks_mut(8).enumerate() {
            t = splitmix64(&mut t) ^ words[i];
            chunk.copy_from_slice(&t.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(step);
        rng
    }

    fn words_per_id(&self) -> u128 {
        4 * self.dim as u128
    }

    /// Fills `xi` and `eta` (each of length `dim`) with independent standard
    /// normals for particle `id` at `step`.
    pub fn draw(&self, channel: u32, step: u64, id: u64, xi: &mut [f64], eta: &mut [f64]) {
        let mut rng = self.rng(channel, step);
        rng.set_word_pos(id as u128 * self.words_per_id());
        fill_pairs(&mut rng, xi, eta);
    }

    /// Fills noise for a whole ensemble in one sequential pass when the ids
    /// are `0..n` in order, and falls back to per-id seeks otherwise.
    pub fn draw_many(&self, channel: u32, step: u64, ids: &[u64], xi: &mut [f64], eta: &mut [f64]) {
        let d = self.dim;
        let contiguous = ids.iter().enumerate().all(|(i, &id)| id == ids[0] + i as u64);
        if contiguous && !ids.is_empty() {
            let mut rng = self.rng(channel, step);
            rng.set_word_pos(ids[0] as u128 * self.words_per_id());
            for i in 0..ids.len() {
                fill_pairs(&mut rng, &mut xi[i * d..(i + 1) * d], &mut eta[i * d..(i + 1) * d]);
            }
        } else {
            for (i, &id) in ids.iter().enumerate() {
                self.draw(channel, step, id, &mut xi[i * d..(i + 1) * d], &mut eta[i * d..(i + 1) * d]);
            }
        }
    }
}

fn uniform_open(rng: &mut ChaCha8Rng) -> f64 {
    // (0, 1]: 53 random bits, shifted away from zero
    ((rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

/// Box-Muller with a fixed consumption of four 32-bit words per pair.
fn fill_pairs(rng: &mut ChaCha8Rng, xi: &mut [f64], eta: &mut [f64]) {
    for k in 0..xi.len() {
        let u1 = uniform_open(rng);
        let u2 = uniform_open(rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let th = std::f64::consts::TAU * u2;
        xi[k] = r * th.cos();
        eta[k] = r * th.sin();
    }
}
