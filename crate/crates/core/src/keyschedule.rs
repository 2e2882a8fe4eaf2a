//! Keystream derivation from a 64-bit master key.
//!
//! Every keyed decision of the cipher (block permutation, per-block
//! orientation, negative-positive bits, color permutations) and the template
//! protection matrix is drawn from an independent SplitMix64 stream. A stream
//! is selected by a small integer *step tag*:
//!
//! | tag | consumer |
//! |-----|----------|
//! | 0   | block scrambling permutation |
//! | 1   | rotation/flip codes |
//! | 2   | negative-positive bits |
//! | 3   | color shuffle indices |
//! | 100 | template protection matrix |
//!
//! SplitMix64 is portable and easy to reproduce bit-for-bit, but it is not a
//! CSPRNG. A hardened deployment would put a standard KDF and stream cipher
//! behind the same functions.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::cipher::{Scheme, Steps};
use crate::error::{Error, Result};

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub const TAG_SCRAMBLE: u64 = 0;
pub const TAG_ROTATE_FLIP: u64 = 1;
pub const TAG_NEGPOS: u64 = 2;
pub const TAG_COLOR_SHUFFLE: u64 = 3;
pub const TAG_TEMPLATE: u64 = 100;

/// SplitMix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One SplitMix64 step: returns `(new_state, output)`.
#[inline]
pub fn splitmix_next(state: u64) -> (u64, u64) {
    let state = state.wrapping_add(GOLDEN_GAMMA);
    (state, mix64(state))
}

/// The secret key `K`: any 64-bit value.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MasterKey(u64);

impl MasterKey {
    pub const fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub const fn seed(self) -> u64 {
        self.0
    }

    /// Parses exactly 16 hex digits (either case).
    pub fn from_hex(text: &str) -> Result<Self> {
        if text.len() != 16 || !text.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::Key(format!("expected 16 hex characters, got {text:?}")));
        }
        u64::from_str_radix(text, 16)
            .map(Self)
            .map_err(|e| Error::Key(e.to_string()))
    }

    /// Reads the key file format: one line of 16 hex characters, newline-terminated.
    pub fn from_key_file(contents: &str) -> Result<Self> {
        let line = contents.strip_suffix('\n').unwrap_or(contents);
        let line = line.strip_suffix('\r').unwrap_or(line);
        Self::from_hex(line)
    }

    pub fn to_key_file(self) -> String {
        format!("{self}\n")
    }

    /// Derives an independent per-image key from this key and an image label.
    ///
    /// Encrypting every image under its own key is what keeps one leaked
    /// plaintext/ciphertext pair from exposing the other images.
    pub fn derive_for_image(self, image_id: &str) -> MasterKey {
        let mut hasher = Sha256::new();
        hasher.update(b"etcimg per-image key v1\0");
        hasher.update(self.0.to_be_bytes());
        hasher.update(image_id.as_bytes());
        let digest = hasher.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        MasterKey(u64::from_be_bytes(word))
    }
}

impl fmt::Display for MasterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MasterKey(..)")
    }
}

impl FromStr for MasterKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_hex(s)
    }
}

/// Seed of the stream identified by `step_tag`.
pub fn derive_step_seed(key: MasterKey, step_tag: u64) -> u64 {
    mix64(key.0 ^ step_tag.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA))
}

/// A SplitMix64 stream. Advanced explicitly; cloning forks it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepStream {
    state: u64,
}

impl StepStream {
    pub fn from_seed(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn for_step(key: MasterKey, step_tag: u64) -> Self {
        Self::from_seed(derive_step_seed(key, step_tag))
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        let (state, out) = splitmix_next(self.state);
        self.state = state;
        out
    }

    /// Next draw reduced modulo `n`, for `1 <= n <= 2^32`. The modulo bias is at most 2^-32.
    pub fn uniform_below(&mut self, n: u64) -> Result<u64> {
        if n == 0 || n > 1 << 32 {
            return Err(Error::Invalid(format!("uniform_below requires 1 <= n <= 2^32, got {n}")));
        }
        Ok(self.next_u64() % n)
    }

    /// Uniform in (0, 1]: `(draw + 1) / 2^64`.
    pub fn open_unit(&mut self) -> f64 {
        (self.next_u64() as f64 + 1.0) / 18_446_744_073_709_551_616.0
    }
}

/// Keyed Fisher–Yates shuffle of `0..n`.
pub fn gen_permutation(seed: u64, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut stream = StepStream::from_seed(seed);
    for i in (1..n).rev() {
        let j = stream.uniform_below(i as u64 + 1).expect("i + 1 is in range") as usize;
        perm.swap(i, j);
    }
    perm
}

/// `n` successive draws from `[0, alphabet)`.
pub fn gen_symbols(seed: u64, n: usize, alphabet: u32) -> Result<Vec<u32>> {
    if alphabet == 0 {
        return Err(Error::Invalid("symbol alphabet must be non-empty".into()));
    }
    let mut stream = StepStream::from_seed(seed);
    (0..n)
        .map(|_| stream.uniform_below(alphabet as u64).map(|v| v as u32))
        .collect()
}

/// Natural log of `n!`.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    if n <= 256 {
        return (2..=n).map(|k| (k as f64).ln()).sum();
    }
    // Stirling series for ln Γ(n + 1); truncation error is far below f64 resolution for n > 256.
    let x = n as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0))));
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + series
}

pub fn log2_factorial(n: u64) -> f64 {
    ln_factorial(n) / std::f64::consts::LN_2
}

/// log2 of the number of keys for `n_blocks` blocks under the enabled steps.
pub fn keyspace_bits(n_blocks: u64, steps: Steps, scheme: Scheme) -> Result<f64> {
    if n_blocks == 0 {
        return Err(Error::Invalid("key space needs at least one block".into()));
    }
    if steps.color_shuffle && scheme == Scheme::GrayscaleBased {
        return Err(Error::Config("color shuffle is not available in the grayscale-based scheme".into()));
    }
    let n = n_blocks as f64;
    let mut bits = 0.0;
    if steps.scramble {
        bits += log2_factorial(n_blocks);
    }
    if steps.rotate_flip {
        bits += 3.0 * n;
    }
    if steps.negpos {
        bits += n;
    }
    if steps.color_shuffle {
        bits += 6f64.log2() * n;
    }
    Ok(bits)
}
