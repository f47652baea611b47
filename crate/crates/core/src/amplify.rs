//! Toeplitz-matrix privacy amplification over GF(2).
//!
//! The `l x n` matrix is `T[i][j] = seed[i - j + n - 1]`, so output bit `i`
//! is coefficient `i + n - 1` of the carry-less product `seed(x) key(x)`.
//! The product is computed with Karatsuba on 64-bit words, using the
//! `pclmulqdq` instruction where available.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::bits::Bits;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AmplifyError {
    #[error("output length {out_len} exceeds input length {n}")]
    OutputTooLong { n: usize, out_len: usize },
    #[error("seed has {got} bits, expected n + l - 1 = {expected}")]
    SeedLength { got: usize, expected: usize },
    #[error("key has {got} bits, seed was built for {expected}")]
    KeyLength { got: usize, expected: usize },
}

/// First column and first row of the matrix, `n + l - 1` bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToeplitzSeed {
    bits: Bits,
    n: usize,
    out_len: usize,
}

impl ToeplitzSeed {
    pub fn new(bits: Bits, n: usize, out_len: usize) -> Result<Self, AmplifyError> {
        if out_len > n {
            return Err(AmplifyError::OutputTooLong { n, out_len });
        }
        let expected = seed_len(n, out_len);
        if bits.len() != expected {
            return Err(AmplifyError::SeedLength {
                got: bits.len(),
                expected,
            });
        }
        Ok(Self { bits, n, out_len })
    }

    /// Seed expanded deterministically from a 64-bit value.
    pub fn from_u64(seed: u64, n: usize, out_len: usize) -> Result<Self, AmplifyError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Self::new(Bits::random(seed_len(n, out_len), &mut rng), n, out_len)
    }

    pub fn bits(&self) -> &Bits {
        &self.bits
    }

    pub fn input_len(&self) -> usize {
        self.n
    }

    pub fn output_len(&self) -> usize {
        self.out_len
    }
}

fn seed_len(n: usize, out_len: usize) -> usize {
    if out_len == 0 {
        0
    } else {
        n + out_len - 1
    }
}

pub fn toeplitz_hash(key: &Bits, seed: &ToeplitzSeed) -> Result<Bits, AmplifyError> {
    let n = seed.n;
    if key.len() != n {
        return Err(AmplifyError::KeyLength {
            got: key.len(),
            expected: n,
        });
    }
    let l = seed.out_len;
    if l == 0 {
        return Ok(Bits::new());
    }
    let prod = clmul_poly(seed.bits.words(), key.words());
    Ok(extract(&prod, n - 1, l))
}

/// Bits `[start, start + len)` of a word-packed polynomial.
fn extract(words: &[u64], start: usize, len: usize) -> Bits {
    let (w0, s) = (start / 64, start % 64);
    let out: Vec<u64> = (0..len.div_ceil(64))
        .map(|i| {
            let lo = words.get(w0 + i).copied().unwrap_or(0);
            if s == 0 {
                lo
            } else {
                let hi = words.get(w0 + i + 1).copied().unwrap_or(0);
                (lo >> s) | (hi << (64 - s))
            }
        })
        .collect();
    Bits::from_words(out, len)
}

/// Carry-less product of two word-packed polynomials.
pub fn clmul_poly(a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = vec![0u64; a.len() + b.len()];
    if a.is_empty() || b.is_empty() {
        return out;
    }
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let m = short.len();
    let mut scratch = Vec::new();
    for (c, chunk) in long.chunks(m).enumerate() {
        let mut padded;
        let chunk = if chunk.len() < m {
            padded = chunk.to_vec();
            padded.resize(m, 0);
            &padded[..]
        } else {
            chunk
        };
        scratch.clear();
        scratch.resize(2 * m, 0);
        karatsuba(chunk, short, &mut scratch);
        for (i, w) in scratch.iter().enumerate() {
            if let Some(o) = out.get_mut(c * m + i) {
                *o ^= w;
            }
        }
    }
    out
}

const KARATSUBA_CUTOFF: usize = 24;

/// `out = a * b` for equal-length inputs; `out.len() == 2 * a.len()`.
fn karatsuba(a: &[u64], b: &[u64], out: &mut [u64]) {
    let n = a.len();
    debug_assert_eq!(n, b.len());
    out.iter_mut().for_each(|w| *w = 0);
    if n <= KARATSUBA_CUTOFF {
        schoolbook(a, b, out);
        return;
    }
    let h = n.div_ceil(2);
    let (a0, a1) = a.split_at(h);
    let (b0, b1) = b.split_at(h);
    let mut z0 = vec![0u64; 2 * h];
    karatsuba(a0, b0, &mut z0);
    let mut a1p = a1.to_vec();
    a1p.resize(h, 0);
    let mut b1p = b1.to_vec();
    b1p.resize(h, 0);
    let mut z2 = vec![0u64; 2 * h];
    karatsuba(&a1p, &b1p, &mut z2);
    let sa: Vec<u64> = a0.iter().zip(&a1p).map(|(x, y)| x ^ y).collect();
    let sb: Vec<u64> = b0.iter().zip(&b1p).map(|(x, y)| x ^ y).collect();
    let mut z1 = vec![0u64; 2 * h];
    karatsuba(&sa, &sb, &mut z1);
    for i in 0..2 * h {
        z1[i] ^= z0[i] ^ z2[i];
    }
    for (i, w) in z0.iter().enumerate() {
        out[i] ^= w;
    }
    for (i, w) in z1.iter().enumerate() {
        if let Some(o) = out.get_mut(h + i) {
            *o ^= w;
        }
    }
    for (i, w) in z2.iter().enumerate() {
        if let Some(o) = out.get_mut(2 * h + i) {
            *o ^= w;
        }
    }
}

fn schoolbook(a: &[u64], b: &[u64], out: &mut [u64]) {
    let mul = clmul_fn();
    for (i, &x) in a.iter().enumerate() {
        if x == 0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            let (lo, hi) = mul(x, y);
            out[i + j] ^= lo;
            out[i + j + 1] ^= hi;
        }
    }
}

type ClmulFn = fn(u64, u64) -> (u64, u64);

fn clmul_fn() -> ClmulFn {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("pclmulqdq") {
            return clmul_hw;
        }
    }
    clmul_sw
}

#[cfg(target_arch = "x86_64")]
fn clmul_hw(a: u64, b: u64) -> (u64, u64) {
    use std::arch::x86_64::*;
    // SAFETY: only selected after runtime detection of pclmulqdq.
    unsafe {
        let r = _mm_clmulepi64_si128(_mm_cvtsi64_si128(a as i64), _mm_cvtsi64_si128(b as i64), 0);
        let lo = _mm_cvtsi128_si64(r) as u64;
        let hi = _mm_cvtsi128_si64(_mm_unpackhi_epi64(r, r)) as u64;
        (lo, hi)
    }
}

/// Portable 64x64 carry-less multiply with a 4-bit window.
pub fn clmul_sw(a: u64, b: u64) -> (u64, u64) {
    let mut table = [0u128; 16];
    for i in 1..16 {
        table[i] = if i & 1 == 1 {
            table[i - 1] ^ a as u128
        } else {
            table[i / 2] << 1
        };
    }
    let mut r = 0u128;
    for k in (0..16).rev() {
        r = (r << 4) ^ table[((b >> (4 * k)) & 0xf) as usize];
    }
    (r as u64, (r >> 64) as u64)
}
