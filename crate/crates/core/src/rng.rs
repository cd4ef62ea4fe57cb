//! Stable hashing and the counter-based generator behind every seeded draw.
//!
//! The generator is SplitMix64 addressed by counter: the `i`-th output of a
//! stream with key `k` is `mix64(k + (i + 1) * 0x9E3779B97F4A7C15)` (wrapping),
//! where `mix64` is the SplitMix64 finalizer. Streams are therefore random
//! access and can be re-derived in any language from the key alone. Stream
//! keys are built with [`stream_key`], which folds a list of 64-bit parts into
//! a seed one part at a time.
//!
//! Derived quantities:
//! - uniform `f64` in `[0, 1)`: top 53 bits of an output times `2^-53`;
//! - bounded integer in `[0, n)`: rejection of outputs below `2^64 mod n`,
//!   then `x mod n`;
//! - standard normal: Box-Muller cosine branch on two consecutive uniforms,
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Seed for one subject: `seed XOR fnv1a64(subject as UTF-8)`.
pub fn subject_seed(seed: u64, subject: &str) -> u64 {
    seed ^ fnv1a64(subject.as_bytes())
}

pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `seed`: `k = mix64(k ^ mix64(part + GOLDEN))` per part.
pub fn stream_key(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(seed, |k, &p| mix64(k ^ mix64(p.wrapping_add(GOLDEN))))
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        CounterRng { key, counter: 0 }
    }

    pub fn from_parts(seed: u64, parts: &[u64]) -> Self {
        Self::new(stream_key(seed, parts))
    }

    /// Output at an absolute position, independent of the cursor.
    pub fn at(&self, index: u64) -> u64 {
        mix64(
            self.key
                .wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)),
        )
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = self.at(self.counter);
        self.counter += 1;
        out
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Unbiased integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }

    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle, swapping from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
