//! Counter-based randomness: every draw is a pure function of
//! `(seed, frame, purpose)`, so scenarios replay bit-identically no matter the
//! order in which frames or purposes are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for. Each purpose gets an independent stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    DetectionDropout = 1,
    DetectionConfidence = 2,
    RegistrationNoise = 3,
    TrackingNoise = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fresh generator for one `(seed, frame, purpose)` key.
pub fn keyed(seed: u64, frame: u64, purpose: Purpose) -> ChaCha8Rng {
    let a = splitmix64(seed);
    let b = splitmix64(a ^ frame.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    let c = splitmix64(b ^ (purpose as u64).wrapping_mul(0xA076_1D64_78BD_642F));
    let mut key = [0u8; 32];
    for (i, word) in [a, b, c, splitmix64(c)].iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
