//! Frame and message encoding. Byte-exact layout is in `docs/wire-format.md`.
//!
//! Frame: `"QKD1"`, u8 type, u8 flags (0), u32 payload length, payload,
//! u32 CRC32 of the payload. Integers are little-endian, bit strings are
//! packed LSB-first, index lists are unsigned-LEB128 deltas.

use thiserror::Error;

use crate::bits::Bits;

pub const MAGIC: [u8; 4] = *b"QKD1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 10;
/// Largest payload a decoder will accept.
pub const MAX_PAYLOAD: usize = 256 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic")]
    BadMagic,
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("nonzero flags {0:#x}")]
    BadFlags(u8),
    #[error("payload length {0} exceeds limit")]
    TooLong(usize),
    #[error("frame truncated")]
    Truncated,
    #[error("CRC mismatch")]
    BadCrc,
    #[error("malformed {0} payload")]
    Malformed(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AbortReason {
    Config = 1,
    Correctness = 2,
    InsufficientKey = 3,
    Protocol = 4,
    Timeout = 5,
}

impl AbortReason {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::Config,
            2 => Self::Correctness,
            3 => Self::InsufficientKey,
            4 => Self::Protocol,
            5 => Self::Timeout,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Config => "config digest",
            Self::Correctness => "correctness",
            Self::InsufficientKey => "insufficient key",
            Self::Protocol => "protocol",
            Self::Timeout => "timeout",
        }
    }
}

impl std::fmt::Display for AbortReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Hello { version: u16, digest: [u8; 32], nonce: u64 },
    /// Click slots in nondecreasing order and the detector basis (1 = X).
    Detections { slots: Vec<u64>, bases: Bits },
    /// Alice's basis (1 = X) and intensity (1 = decoy) per reported click.
    BasisReveal { bases: Bits, intensities: Bits },
    XBitsReveal { bits: Bits },
    /// Increasing indices into the Z-sifted list and the sender's bits there.
    QberSample { indices: Vec<u64>, bits: Bits },
    /// Requests carry ranges and no parities; replies carry parities only.
    EcParity { round: u32, pass: u8, blocks: Vec<(u32, u32)>, parities: Bits },
    /// Disclosed parity count and corrected errors per intensity.
    EcDone { leak: u64, errors: [u64; 2] },
    Verify { seed: u64, tag: Bits },
    PaSeed { out_len: u64, seed: Bits },
    Abort { reason: AbortReason, detail: String },
}

impl Message {
    pub fn type_code(&self) -> u8 {
        match self {
            Message::Hello { .. } => 1,
            Message::Detections { .. } => 2,
            Message::BasisReveal { .. } => 3,
            Message::XBitsReveal { .. } => 4,
            Message::QberSample { .. } => 5,
            Message::EcParity { .. } => 6,
            Message::EcDone { .. } => 7,
            Message::Verify { .. } => 8,
            Message::PaSeed { .. } => 9,
            Message::Abort { .. } => 10,
        }
    }

    pub fn name(&self) -> &'static str {
        type_name(self.type_code())
    }

    pub fn encode_payload(&self) -> Vec<u8> {
        let mut w = Vec::new();
        match self {
            Message::Hello { version, digest, nonce } => {
                w.extend_from_slice(&version.to_le_bytes());
                w.extend_from_slice(digest);
                w.extend_from_slice(&nonce.to_le_bytes());
            }
            Message::Detections { slots, bases } => {
                put_u64(&mut w, slots.len() as u64);
                put_deltas(&mut w, slots);
                w.extend_from_slice(&bases.to_bytes());
            }
            Message::BasisReveal { bases, intensities } => {
                put_u64(&mut w, bases.len() as u64);
                w.extend_from_slice(&bases.to_bytes());
                w.extend_from_slice(&intensities.to_bytes());
            }
            Message::XBitsReveal { bits } => {
                put_u64(&mut w, bits.len() as u64);
                w.extend_from_slice(&bits.to_bytes());
            }
            Message::QberSample { indices, bits } => {
                put_u64(&mut w, indices.len() as u64);
                put_deltas(&mut w, indices);
                w.extend_from_slice(&bits.to_bytes());
            }
            Message::EcParity { round, pass, blocks, parities } => {
                w.extend_from_slice(&round.to_le_bytes());
                w.push(*pass);
                w.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
                for (s, l) in blocks {
                    w.extend_from_slice(&s.to_le_bytes());
                    w.extend_from_slice(&l.to_le_bytes());
                }
                w.extend_from_slice(&(parities.len() as u32).to_le_bytes());
                w.extend_from_slice(&parities.to_bytes());
            }
            Message::EcDone { leak, errors } => {
                put_u64(&mut w, *leak);
                put_u64(&mut w, errors[0]);
                put_u64(&mut w, errors[1]);
            }
            Message::Verify { seed, tag } => {
                put_u64(&mut w, *seed);
                w.extend_from_slice(&(tag.len() as u16).to_le_bytes());
                w.extend_from_slice(&tag.to_bytes());
            }
            Message::PaSeed { out_len, seed } => {
                put_u64(&mut w, *out_len);
                put_u64(&mut w, seed.len() as u64);
                w.extend_from_slice(&seed.to_bytes());
            }
            Message::Abort { reason, detail } => {
                w.push(*reason as u8);
                let d = &detail.as_bytes()[..detail.len().min(u16::MAX as usize)];
                w.extend_from_slice(&(d.len() as u16).to_le_bytes());
                w.extend_from_slice(d);
            }
        }
        w
    }

    pub fn decode_payload(kind: u8, p: &[u8]) -> Result<Message, WireError> {
        let name = type_name(kind);
        if name == "UNKNOWN" {
            return Err(WireError::UnknownType(kind));
        }
        let mut r = Reader { buf: p, name };
        let msg = match kind {
            1 => Message::Hello {
                version: r.u16()?,
                digest: r.take(32)?.try_into().unwrap(),
                nonce: r.u64()?,
            },
            2 => {
                let n = r.count()?;
                let slots = r.deltas(n)?;
                let bases = r.bits(n)?;
                Message::Detections { slots, bases }
            }
            3 => {
                let n = r.count()?;
                let bases = r.bits(n)?;
                let intensities = r.bits(n)?;
                Message::BasisReveal { bases, intensities }
            }
            4 => {
                let n = r.count()?;
                Message::XBitsReveal { bits: r.bits(n)? }
            }
            5 => {
                let n = r.count()?;
                let indices = r.deltas(n)?;
                Message::QberSample {
                    indices,
                    bits: r.bits(n)?,
                }
            }
            6 => {
                let round = r.u32()?;
                let pass = r.u8()?;
                let nb = r.u32()? as usize;
                if nb > r.buf.len() / 8 {
                    return Err(r.bad());
                }
                let blocks = (0..nb).map(|_| Ok((r.u32()?, r.u32()?))).collect::<Result<_, WireError>>()?;
                let np = r.u32()? as usize;
                Message::EcParity {
                    round,
                    pass,
                    blocks,
                    parities: r.bits(np)?,
                }
            }
            7 => Message::EcDone {
                leak: r.u64()?,
                errors: [r.u64()?, r.u64()?],
            },
            8 => {
                let seed = r.u64()?;
                let n = r.u16()? as usize;
                Message::Verify { seed, tag: r.bits(n)? }
            }
            9 => {
                let out_len = r.u64()?;
                let n = r.count()?;
                Message::PaSeed { out_len, seed: r.bits(n)? }
            }
            10 => {
                let reason = AbortReason::from_u8(r.u8()?).ok_or(r.bad())?;
                let n = r.u16()? as usize;
                let detail = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| r.bad())?;
                Message::Abort { reason, detail }
            }
            _ => unreachable!(),
        };
        if !r.buf.is_empty() {
            return Err(r.bad());
        }
        Ok(msg)
    }
}

pub fn type_name(code: u8) -> &'static str {
    match code {
        1 => "HELLO",
        2 => "DETECTIONS",
        3 => "BASIS_REVEAL",
        4 => "X_BITS_REVEAL",
        5 => "QBER_SAMPLE",
        6 => "EC_PARITY",
        7 => "EC_DONE",
        8 => "VERIFY",
        9 => "PA_SEED",
        10 => "ABORT",
        _ => "UNKNOWN",
    }
}

pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let payload = msg.encode_payload();
    let mut f = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    f.extend_from_slice(&MAGIC);
    f.push(msg.type_code());
    f.push(0);
    f.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    f.extend_from_slice(&payload);
    f.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    f
}

/// Validates a frame header and returns `(type, payload length)`.
pub fn parse_header(h: &[u8]) -> Result<(u8, usize), WireError> {
    if h.len() < HEADER_LEN {
        return Err(WireError::Truncated);
    }
    if h[..4] != MAGIC {
        return Err(WireError::BadMagic);
    }
    if h[5] != 0 {
        return Err(WireError::BadFlags(h[5]));
    }
    let len = u32::from_le_bytes(h[6..10].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(WireError::TooLong(len));
    }
    Ok((h[4], len))
}

/// Decodes exactly one complete frame.
pub fn decode_frame(f: &[u8]) -> Result<Message, WireError> {
    let (kind, len) = parse_header(f)?;
    if f.len() != HEADER_LEN + len + 4 {
        return Err(WireError::Truncated);
    }
    let payload = &f[HEADER_LEN..HEADER_LEN + len];
    let crc = u32::from_le_bytes(f[HEADER_LEN + len..].try_into().unwrap());
    if crc != crc32fast::hash(payload) {
        return Err(WireError::BadCrc);
    }
    Message::decode_payload(kind, payload)
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_leb128(w: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            w.push(byte);
            return;
        }
        w.push(byte | 0x80);
    }
}

/// Deltas from the previous value (the first from zero); input must be
/// nondecreasing.
fn put_deltas(w: &mut Vec<u8>, vals: &[u64]) {
    let mut prev = 0;
    for &v in vals {
        put_leb128(w, v - prev);
        prev = v;
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    name: &'static str,
}

impl<'a> Reader<'a> {
    fn bad(&self) -> WireError {
        WireError::Malformed(self.name)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(self.bad());
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// An element count, bounded by what the remaining bytes could hold.
    fn count(&mut self) -> Result<usize, WireError> {
        let n = self.u64()?;
        if n > self.buf.len() as u64 * 8 {
            return Err(self.bad());
        }
        Ok(n as usize)
    }

    fn leb128(&mut self) -> Result<u64, WireError> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.u8()?;
            let part = (b & 0x7f) as u64;
            if shift == 63 && part > 1 {
                return Err(self.bad());
            }
            v |= part << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(self.bad())
    }

    fn deltas(&mut self, n: usize) -> Result<Vec<u64>, WireError> {
        let mut out = Vec::with_capacity(n);
        let mut acc = 0u64;
        for _ in 0..n {
            acc = acc.checked_add(self.leb128()?).ok_or(self.bad())?;
            out.push(acc);
        }
        Ok(out)
    }

    fn bits(&mut self, n: usize) -> Result<Bits, WireError> {
        let bytes = self.take(n.div_ceil(8))?;
        Bits::from_bytes(bytes, n).ok_or(self.bad())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn samples() -> Vec<Message> {
        vec![
            Message::Hello {
                version: VERSION,
                digest: [7; 32],
                nonce: 42,
            },
            Message::Detections {
                slots: vec![3, 3, 200, 1 << 40],
                bases: Bits::from_bools([false, true, false, false]),
            },
            Message::BasisReveal {
                bases: Bits::from_bools([true, false]),
                intensities: Bits::from_bools([false, true]),
            },
            Message::XBitsReveal { bits: Bits::zeros(9) },
            Message::QberSample {
                indices: vec![0, 5, 9],
                bits: Bits::from_bools([true, true, false]),
            },
            Message::EcParity {
                round: 3,
                pass: 1,
                blocks: vec![(0, 16), (32, 8)],
                parities: Bits::new(),
            },
            Message::EcDone { leak: 99, errors: [4, 1] },
            Message::Verify {
                seed: 5,
                tag: Bits::zeros(31),
            },
            Message::PaSeed {
                out_len: 10,
                seed: Bits::zeros(20),
            },
            Message::Abort {
                reason: AbortReason::Timeout,
                detail: "phase".into(),
            },
        ]
    }

    #[test]
    fn round_trip_every_type() {
        for m in samples() {
            let f = encode_frame(&m);
            assert_eq!(decode_frame(&f).unwrap(), m, "{}", m.name());
        }
    }

    #[test]
    fn detections_layout() {
        let m = Message::Detections {
            slots: vec![1, 130],
            bases: Bits::from_bools([false, true]),
        };
        let f = encode_frame(&m);
        let payload = [2, 0, 0, 0, 0, 0, 0, 0, 0x01, 0x81, 0x01, 0x02];
        assert_eq!(&f[..4], b"QKD1");
        assert_eq!(f[4], 2);
        assert_eq!(f[5], 0);
        assert_eq!(&f[6..10], &(payload.len() as u32).to_le_bytes());
        assert_eq!(&f[10..10 + payload.len()], &payload);
        assert_eq!(&f[10 + payload.len()..], &crc32fast::hash(&payload).to_le_bytes());
    }

    #[test]
    fn corruption_is_rejected() {
        let f = encode_frame(&samples()[1]);
        let mut bad = f.clone();
        bad[12] ^= 1;
        assert_eq!(decode_frame(&bad), Err(WireError::BadCrc));
        let mut bad = f.clone();
        bad[5] = 1;
        assert_eq!(decode_frame(&bad), Err(WireError::BadFlags(1)));
        let mut bad = f.clone();
        bad[0] = b'X';
        assert_eq!(decode_frame(&bad), Err(WireError::BadMagic));
        assert_eq!(decode_frame(&f[..f.len() - 1]), Err(WireError::Truncated));
        let mut bad = f;
        bad[4] = 77;
        assert_eq!(decode_frame(&bad), Err(WireError::UnknownType(77)));
    }

    #[test]
    fn trailing_payload_bytes_rejected() {
        let mut p = Message::EcDone { leak: 1, errors: [0, 0] }.encode_payload();
        p.push(0);
        assert!(Message::decode_payload(7, &p).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_payloads_never_panic(kind in 0u8..12, p in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = Message::decode_payload(kind, &p);
        }

        #[test]
        fn deltas_round_trip(mut v in proptest::collection::vec(any::<u64>(), 0..50)) {
            v.sort();
            let m = Message::QberSample { bits: Bits::zeros(v.len()), indices: v };
            prop_assert_eq!(decode_frame(&encode_frame(&m)).unwrap(), m);
        }
    }
}
