//! Packed bit strings.
//!
//! Bits are stored LSB-first in `u64` words; bit `i` lives in word `i / 64`
//! at position `i % 64`. Unused high bits of the last word are always zero.

use std::fmt;

use rand::Rng;
use serde::de;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct Bits {
    words: Vec<u64>,
    len: usize,
}

impl Bits {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn with_capacity(len: usize) -> Self {
        Self {
            words: Vec::with_capacity(len.div_ceil(64)),
            len: 0,
        }
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut words: Vec<u64> = (0..len.div_ceil(64)).map(|_| rng.random()).collect();
        mask_tail(&mut words, len);
        Self { words, len }
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        let mut out = Self::new();
        for b in iter {
            out.push(b);
        }
        out
    }

    /// Builds from words; bits beyond `len` are cleared.
    pub fn from_words(mut words: Vec<u64>, len: usize) -> Self {
        words.resize(len.div_ceil(64), 0);
        mask_tail(&mut words, len);
        Self { words, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u64 << (i & 63);
        if value {
            self.words[i >> 6] |= mask;
        } else {
            self.words[i >> 6] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i >> 6] ^= 1u64 << (i & 63);
    }

    pub fn push(&mut self, value: bool) {
        if self.len % 64 == 0 {
            self.words.push(0);
        }
        self.len += 1;
        if value {
            let i = self.len - 1;
            self.words[i >> 6] |= 1u64 << (i & 63);
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn parity(&self) -> bool {
        self.words.iter().fold(0u64, |acc, w| acc ^ w).count_ones() & 1 == 1
    }

    /// Number of positions where `self` and `other` differ.
    pub fn hamming(&self, other: &Bits) -> usize {
        assert_eq!(self.len, other.len, "length mismatch");
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    pub fn xor(&self, other: &Bits) -> Bits {
        assert_eq!(self.len, other.len, "length mismatch");
        Bits {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect(),
            len: self.len,
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Packed bytes, LSB-first within each byte; `ceil(len / 8)` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len.div_ceil(8);
        self.words
            .iter()
            .flat_map(|w| w.to_le_bytes())
            .take(n)
            .collect()
    }

    /// Inverse of [`Bits::to_bytes`]. Returns `None` if `bytes` is shorter
    /// than `ceil(len / 8)` or carries set bits past `len`.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Option<Self> {
        let n = len.div_ceil(8);
        if bytes.len() < n {
            return None;
        }
        let mut words = vec![0u64; len.div_ceil(64)];
        for (i, &b) in bytes[..n].iter().enumerate() {
            words[i / 8] |= (b as u64) << (8 * (i % 8));
        }
        let out = Self { words, len };
        let mut check = out.words.clone();
        mask_tail(&mut check, len);
        (check == out.words).then_some(out)
    }

    pub fn to_hex(&self) -> String {
        self.to_bytes().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn mask_tail(words: &mut [u64], len: usize) {
    let rem = len % 64;
    if rem != 0 {
        if let Some(last) = words.last_mut() {
            *last &= (1u64 << rem) - 1;
        }
    }
}

impl fmt::Debug for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bits({}; ", self.len)?;
        for b in self.iter().take(64) {
            f.write_str(if b { "1" } else { "0" })?;
        }
        if self.len > 64 {
            f.write_str("...")?;
        }
        f.write_str(")")
    }
}

/// Serialized as `{"len": n, "hex": "..."}` using [`Bits::to_bytes`] order.
impl Serialize for Bits {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Bits", 2)?;
        st.serialize_field("len", &self.len)?;
        st.serialize_field("hex", &self.to_hex())?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for Bits {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            len: usize,
            hex: String,
        }
        let r = Repr::deserialize(d)?;
        let bytes = (0..r.hex.len())
            .step_by(2)
            .map(|i| r.hex.get(i..i + 2).and_then(|h| u8::from_str_radix(h, 16).ok()))
            .collect::<Option<Vec<u8>>>()
            .ok_or_else(|| de::Error::custom("bad hex"))?;
        if bytes.len() != r.len.div_ceil(8) {
            return Err(de::Error::custom("hex length does not match len"));
        }
        Bits::from_bytes(&bytes, r.len).ok_or_else(|| de::Error::custom("bits set past len"))
    }
}

impl FromIterator<bool> for Bits {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Bits::from_bools(iter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn push_get_flip() {
        let mut b = Bits::new();
        for i in 0..130 {
            b.push(i % 3 == 0);
        }
        assert_eq!(b.len(), 130);
        assert!(b.get(129));
        assert!(!b.get(128));
        b.flip(128);
        assert!(b.get(128));
        assert_eq!(b.count_ones(), 45);
    }

    #[test]
    fn bytes_are_lsb_first() {
        let b = Bits::from_bools([true, false, false, false, false, false, false, false, false, true]);
        assert_eq!(b.to_bytes(), vec![0x01, 0x02]);
    }

    #[test]
    fn from_bytes_rejects_stray_tail_bits() {
        assert!(Bits::from_bytes(&[0xff], 4).is_none());
        assert!(Bits::from_bytes(&[0x0f], 4).is_some());
        assert!(Bits::from_bytes(&[], 1).is_none());
    }

    #[test]
    fn json_round_trip() {
        let b = Bits::from_bools([true, true, false, true, false, false, false, false, true]);
        let j = serde_json::to_string(&b).unwrap();
        assert_eq!(j, r#"{"len":9,"hex":"0b01"}"#);
        assert_eq!(serde_json::from_str::<Bits>(&j).unwrap(), b);
        assert!(serde_json::from_str::<Bits>(r#"{"len":9,"hex":"0b03"}"#).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(v in proptest::collection::vec(any::<bool>(), 0..300)) {
            let b = Bits::from_bools(v.iter().copied());
            let back = Bits::from_bytes(&b.to_bytes(), v.len()).unwrap();
            prop_assert_eq!(back.iter().collect::<Vec<_>>(), v);
        }
    }
}
