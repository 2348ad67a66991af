//! Seeded random streams.
//!
//! One master seed fans out into independent ChaCha streams keyed by name
//! (`"data"`, `"init"`, `"dropout"`, `"shuffle"`, ...), so drawing more
//! numbers in one component never shifts another component's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(name.as_bytes()));
        rng
    }

    /// Sub-stream for item `index` of a named family (e.g. one per subject).
    pub fn indexed(&self, name: &str, index: u64) -> Rng {
        let mut key = name.as_bytes().to_vec();
        key.push(b'/');
        key.extend_from_slice(&index.to_le_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(&key));
        rng
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
