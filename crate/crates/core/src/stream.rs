//! Counter-based random streams.
//!
//! Every draw of every level owns an independent ChaCha8 stream addressed by
//! `(seed, domain, level, draw)`, so results do not depend on how the work is
//! split across threads.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Highest draw index addressable within one level.
pub const MAX_DRAW: u64 = (1 << 56) - 1;

/// Separates streams used for different purposes under the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Estimator,
    Pilot,
    Audit,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Estimator => 0x6573_7469_6d61_746f,
            Domain::Pilot => 0x7069_6c6f_7400_0000,
            Domain::Audit => 0x6175_6469_7400_0000,
        }
    }
}

/// The stream id packing `level` into the top 8 bits and `draw` below.
pub fn stream_id(level: usize, draw: u64) -> u64 {
    debug_assert!(level < 256 && draw <= MAX_DRAW);
    ((level as u64) << 56) | (draw & MAX_DRAW)
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replication `k` derived from a master seed. Distinct `k` give
/// distinct seeds because `splitmix64` is a bijection.
pub fn replication_seed(master: u64, k: u64) -> u64 {
    splitmix64(master ^ splitmix64(k))
}

/// Random source for a single `(level, draw)` pair.
pub struct DrawStream {
    rng: ChaCha8Rng,
    normal: Normal,
}

impl DrawStream {
    pub fn new(seed: u64, domain: Domain, level: usize, draw: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&domain.tag().to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream_id(level, draw));
        DrawStream {
            rng,
            normal: Normal::standard(),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by inversion.
    pub fn normal(&mut self) -> f64 {
        let u = self.uniform();
        self.normal.inverse_cdf(u)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.normal();
        }
    }
}
