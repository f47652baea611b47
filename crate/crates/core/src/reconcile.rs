//! Cascade error correction and the verification hash.
//!
//! Bob drives the exchange: he asks for Alice's parities of index ranges
//! within one pass's permuted ordering and corrects his key. Pass `p` uses
//! blocks of `k1 * 2^p` bits; pass 0 is unpermuted and later passes use
//! shuffles derived from the shared seed, so no permutation is sent.
//!
//! Odd blocks are searched in waves: every odd top-level block of the lowest
//! pass that has one is bisected in parallel, one level per round. Only the
//! left half's parity is requested; the right half's follows from the parent
//! and is cached, as are all parities Alice has revealed. After each flip the
//! affected blocks of every started pass are rechecked before the next wave.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::amplify::ToeplitzSeed;
use crate::bits::Bits;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum ReconcileError {
    #[error("keys differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("keys must hold at least 64 bits, got {0}")]
    TooShort(usize),
    #[error("qber hint {0} outside (0, 0.25)")]
    HintOutOfRange(String),
    #[error("parity request out of range")]
    BadRequest,
    #[error("parity reply has {got} bits, expected {expected}")]
    BadReply { got: usize, expected: usize },
    #[error("no request is outstanding")]
    Unexpected,
    #[error("eps_cor {0} outside (2^-64, 1)")]
    BadEpsCor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CascadeParams {
    pub initial_block: usize,
    pub passes: usize,
}

impl CascadeParams {
    /// `ceil(0.73 / q)` initial block, four passes.
    pub fn for_qber(qber_hint: f64) -> Result<Self, ReconcileError> {
        if !(qber_hint > 0.0 && qber_hint < 0.25) {
            return Err(ReconcileError::HintOutOfRange(qber_hint.to_string()));
        }
        Ok(Self {
            initial_block: (0.73 / qber_hint).ceil() as usize,
            passes: 4,
        })
    }

    pub fn block_size(&self, pass: usize, n: usize) -> usize {
        self.initial_block
            .max(1)
            .saturating_mul(1usize << pass.min(40))
            .min(n.max(1))
    }
}

/// A batch of ranges in one pass's ordering; `(start, len)` each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityRequest {
    pub pass: u8,
    pub blocks: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityExchange {
    pub request: ParityRequest,
    pub parities: Bits,
}

fn permutations(n: usize, passes: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut perms = Vec::with_capacity(passes);
    perms.push((0..n as u32).collect::<Vec<_>>());
    for _ in 1..passes {
        let mut p: Vec<u32> = (0..n as u32).collect();
        p.shuffle(&mut rng);
        perms.push(p);
    }
    perms
}

fn range_parity(key: &Bits, perm: &[u32], start: u32, len: u32) -> bool {
    perm[start as usize..(start + len) as usize]
        .iter()
        .fold(false, |acc, &i| acc ^ key.get(i as usize))
}

/// Alice's side: answers parity requests against her fixed key.
#[derive(Debug, Clone)]
pub struct CascadeAlice {
    key: Bits,
    perms: Vec<Vec<u32>>,
    leak: u64,
}

impl CascadeAlice {
    pub fn new(key: Bits, params: CascadeParams, seed: u64) -> Self {
        let perms = permutations(key.len(), params.passes, seed);
        Self { key, perms, leak: 0 }
    }

    pub fn answer(&mut self, req: &ParityRequest) -> Result<Bits, ReconcileError> {
        let perm = self.perms.get(req.pass as usize).ok_or(ReconcileError::BadRequest)?;
        let n = self.key.len() as u64;
        let mut out = Bits::with_capacity(req.blocks.len());
        for &(s, l) in &req.blocks {
            if l == 0 || s as u64 + l as u64 > n {
                return Err(ReconcileError::BadRequest);
            }
            out.push(range_parity(&self.key, perm, s, l));
        }
        self.leak += out.len() as u64;
        Ok(out)
    }

    pub fn leak_bits(&self) -> u64 {
        self.leak
    }

    pub fn key(&self) -> &Bits {
        &self.key
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum State {
    NeedTop(usize),
    AwaitTop(usize),
    Searching { pass: usize, searches: Vec<(u32, u32)> },
    AwaitSearch { pass: usize, searches: Vec<(u32, u32)> },
    Done,
}

/// Bob's side: issues requests and corrects his key.
#[derive(Debug, Clone)]
pub struct CascadeBob {
    key: Bits,
    params: CascadeParams,
    perms: Vec<Vec<u32>>,
    inv: Vec<Vec<u32>>,
    alice: HashMap<(usize, u32, u32), bool>,
    top_alice: Vec<Vec<bool>>,
    top_bob: Vec<Vec<bool>>,
    state: State,
    pending: Option<ParityRequest>,
    leak: u64,
    rounds: u64,
    flips: Vec<usize>,
}

impl CascadeBob {
    pub fn new(key: Bits, params: CascadeParams, seed: u64) -> Self {
        let perms = permutations(key.len(), params.passes, seed);
        let inv = perms
            .iter()
            .map(|p| {
                let mut v = vec![0u32; p.len()];
                for (pos, &i) in p.iter().enumerate() {
                    v[i as usize] = pos as u32;
                }
                v
            })
            .collect();
        Self {
            key,
            params,
            perms,
            inv,
            alice: HashMap::new(),
            top_alice: Vec::new(),
            top_bob: Vec::new(),
            state: if params.passes == 0 { State::Done } else { State::NeedTop(0) },
            pending: None,
            leak: 0,
            rounds: 0,
            flips: Vec::new(),
        }
    }

    fn top_blocks(&self, pass: usize) -> Vec<(u32, u32)> {
        let n = self.key.len();
        let bs = self.params.block_size(pass, n);
        (0..n.div_ceil(bs))
            .map(|b| ((b * bs) as u32, bs.min(n - b * bs) as u32))
            .collect()
    }

    /// Next batch to send to Alice, or `None` once reconciliation is complete.
    /// Returns the outstanding request again if called twice.
    pub fn next_request(&mut self) -> Option<ParityRequest> {
        if let Some(p) = &self.pending {
            return Some(p.clone());
        }
        loop {
            match std::mem::replace(&mut self.state, State::Done) {
                State::Done => return None,
                State::NeedTop(p) => {
                    if p >= self.params.passes || self.key.is_empty() {
                        return None;
                    }
                    let req = ParityRequest {
                        pass: p as u8,
                        blocks: self.top_blocks(p),
                    };
                    self.state = State::AwaitTop(p);
                    self.pending = Some(req.clone());
                    return Some(req);
                }
                State::Searching { pass, mut searches } => {
                    let mut blocks = Vec::new();
                    let mut waiting = Vec::new();
                    for s in searches.drain(..) {
                        if let Some(s) = self.descend_cached(pass, s) {
                            blocks.push((s.0, s.1 / 2));
                            waiting.push(s);
                        }
                    }
                    if waiting.is_empty() {
                        self.plan_wave();
                        continue;
                    }
                    let req = ParityRequest { pass: pass as u8, blocks };
                    self.state = State::AwaitSearch { pass, searches: waiting };
                    self.pending = Some(req.clone());
                    return Some(req);
                }
                s @ (State::AwaitTop(_) | State::AwaitSearch { .. }) => {
                    self.state = s;
                    return self.pending.clone();
                }
            }
        }
    }

    /// Feeds Alice's parities for the outstanding request.
    pub fn receive(&mut self, parities: &Bits) -> Result<(), ReconcileError> {
        let req = self.pending.take().ok_or(ReconcileError::Unexpected)?;
        if parities.len() != req.blocks.len() {
            let expected = req.blocks.len();
            self.pending = Some(req);
            return Err(ReconcileError::BadReply {
                got: parities.len(),
                expected,
            });
        }
        self.leak += parities.len() as u64;
        self.rounds += 1;
        let pass = req.pass as usize;
        for (&(s, l), a) in req.blocks.iter().zip(parities.iter()) {
            self.alice.insert((pass, s, l), a);
        }
        match std::mem::replace(&mut self.state, State::Done) {
            State::AwaitTop(p) => {
                let tops = self.top_blocks(p);
                self.top_alice.push(parities.iter().collect());
                self.top_bob
                    .push(tops.iter().map(|&(s, l)| range_parity(&self.key, &self.perms[p], s, l)).collect());
                self.plan_wave();
            }
            State::AwaitSearch { pass, searches } => {
                let mut next = Vec::new();
                for s in searches {
                    if let Some(s) = self.step(pass, s) {
                        next.push(s);
                    }
                }
                self.state = State::Searching { pass, searches: next };
            }
            _ => return Err(ReconcileError::Unexpected),
        }
        Ok(())
    }

    /// Moves one level down using the known parity of the left half.
    /// Returns the remaining search, or `None` after a flip.
    fn step(&mut self, pass: usize, (s, l): (u32, u32)) -> Option<(u32, u32)> {
        let parent = self.alice[&(pass, s, l)];
        let h = l / 2;
        let a_left = self.alice[&(pass, s, h)];
        let b_left = range_parity(&self.key, &self.perms[pass], s, h);
        let next = if a_left != b_left {
            (s, h)
        } else {
            self.alice.insert((pass, s + h, l - h), parent ^ a_left);
            (s + h, l - h)
        };
        if next.1 == 1 {
            self.flip(self.perms[pass][next.0 as usize] as usize);
            None
        } else {
            Some(next)
        }
    }

    /// Descends through levels whose left parity is already known.
    fn descend_cached(&mut self, pass: usize, mut s: (u32, u32)) -> Option<(u32, u32)> {
        while self.alice.contains_key(&(pass, s.0, s.1 / 2)) {
            s = self.step(pass, s)?;
        }
        Some(s)
    }

    fn flip(&mut self, i: usize) {
        self.key.flip(i);
        self.flips.push(i);
        let n = self.key.len();
        for q in 0..self.top_bob.len() {
            let bs = self.params.block_size(q, n);
            let b = self.inv[q][i] as usize / bs;
            self.top_bob[q][b] ^= true;
        }
    }

    fn plan_wave(&mut self) {
        for q in 0..self.top_bob.len() {
            let tops = self.top_blocks(q);
            let odd: Vec<(u32, u32)> = tops
                .iter()
                .enumerate()
                .filter(|&(b, _)| self.top_bob[q][b] != self.top_alice[q][b])
                .map(|(_, &r)| r)
                .collect();
            if !odd.is_empty() {
                self.state = State::Searching { pass: q, searches: odd };
                return;
            }
        }
        self.state = State::NeedTop(self.top_bob.len());
    }

    pub fn is_done(&self) -> bool {
        self.pending.is_none()
            && match self.state {
                State::Done => true,
                State::NeedTop(p) => p >= self.params.passes || self.key.is_empty(),
                _ => false,
            }
    }

    pub fn key(&self) -> &Bits {
        &self.key
    }

    pub fn leak_bits(&self) -> u64 {
        self.leak
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    /// Indices flipped so far, in order (an index may repeat).
    pub fn flips(&self) -> &[usize] {
        &self.flips
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconcileResult {
    pub corrected_key: Bits,
    pub leak_bits: u64,
    pub rounds: u64,
    pub verified: bool,
    pub transcript: Vec<ParityExchange>,
}

/// Default correctness parameter for [`cascade`]'s built-in verification.
pub const DEFAULT_EPS_COR: f64 = 1e-9;

fn check_inputs(a: &Bits, b: &Bits) -> Result<(), ReconcileError> {
    if a.len() != b.len() {
        return Err(ReconcileError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 64 {
        return Err(ReconcileError::TooShort(a.len()));
    }
    Ok(())
}

/// Runs both parties in memory. Returns Alice's and Bob's results; `verified`
/// is the outcome of [`verify`] at [`DEFAULT_EPS_COR`].
pub fn cascade(
    alice_key: &Bits,
    bob_key: &Bits,
    qber_hint: f64,
    seed: u64,
) -> Result<(ReconcileResult, ReconcileResult), ReconcileError> {
    cascade_with(alice_key, bob_key, CascadeParams::for_qber(qber_hint)?, seed)
}

pub fn cascade_with(
    alice_key: &Bits,
    bob_key: &Bits,
    params: CascadeParams,
    seed: u64,
) -> Result<(ReconcileResult, ReconcileResult), ReconcileError> {
    check_inputs(alice_key, bob_key)?;
    let mut alice = CascadeAlice::new(alice_key.clone(), params, seed);
    let mut bob = CascadeBob::new(bob_key.clone(), params, seed);
    let mut transcript = Vec::new();
    while let Some(req) = bob.next_request() {
        let parities = alice.answer(&req)?;
        bob.receive(&parities)?;
        transcript.push(ParityExchange { request: req, parities });
    }
    let v = verify(alice.key(), bob.key(), DEFAULT_EPS_COR, seed ^ 0x7665_7269_6679)?;
    let rounds = bob.rounds();
    Ok((
        ReconcileResult {
            corrected_key: alice.key().clone(),
            leak_bits: alice.leak_bits(),
            rounds,
            verified: v.verified,
            transcript: transcript.clone(),
        },
        ReconcileResult {
            corrected_key: bob.key().clone(),
            leak_bits: bob.leak_bits(),
            rounds,
            verified: v.verified,
            transcript,
        },
    ))
}

/// `ceil(log2(2 / eps_cor))`.
pub fn tag_len(eps_cor: f64) -> Result<usize, ReconcileError> {
    if !(eps_cor > 2f64.powi(-64) && eps_cor < 1.0) {
        return Err(ReconcileError::BadEpsCor(eps_cor.to_string()));
    }
    Ok((2.0 / eps_cor).log2().ceil() as usize)
}

/// Toeplitz hash of `key` to `tag_len(eps_cor)` bits. Keys shorter than the
/// tag are zero-padded.
pub fn verify_tag(key: &Bits, eps_cor: f64, seed: u64) -> Result<Bits, ReconcileError> {
    let l = tag_len(eps_cor)?;
    let mut padded;
    let key = if key.len() < l {
        padded = key.clone();
        while padded.len() < l {
            padded.push(false);
        }
        &padded
    } else {
        key
    };
    let ts = ToeplitzSeed::from_u64(seed, key.len(), l).expect("tag fits key");
    Ok(crate::amplify::toeplitz_hash(key, &ts).expect("matching dimensions"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verification {
    pub verified: bool,
    pub tag_a: Bits,
    pub tag_b: Bits,
}

impl Verification {
    pub fn tag_bits(&self) -> usize {
        self.tag_a.len()
    }
}

pub fn verify(key_a: &Bits, key_b: &Bits, eps_cor: f64, seed: u64) -> Result<Verification, ReconcileError> {
    if key_a.len() != key_b.len() {
        return Err(ReconcileError::LengthMismatch(key_a.len(), key_b.len()));
    }
    let tag_a = verify_tag(key_a, eps_cor, seed)?;
    let tag_b = verify_tag(key_b, eps_cor, seed)?;
    Ok(Verification {
        verified: tag_a == tag_b,
        tag_a,
        tag_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn noisy(n: usize, q: f64, seed: u64) -> (Bits, Bits) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let a = Bits::random(n, &mut rng);
        let mut b = a.clone();
        for i in 0..n {
            if rng.random::<f64>() < q {
                b.flip(i);
            }
        }
        (a, b)
    }

    #[test]
    fn identical_keys_one_pass() {
        let (a, _) = noisy(128, 0.0, 1);
        let p = CascadeParams {
            initial_block: 32,
            passes: 1,
        };
        let (ra, rb) = cascade_with(&a, &a, p, 5).unwrap();
        assert_eq!(ra.leak_bits, 4);
        assert_eq!(rb.leak_bits, 4);
        assert_eq!(rb.corrected_key, a);
        assert!(rb.verified);
    }

    #[test]
    fn single_error_costs_five_more() {
        let (a, _) = noisy(128, 0.0, 1);
        let mut b = a.clone();
        b.flip(77);
        let p = CascadeParams {
            initial_block: 32,
            passes: 1,
        };
        let (ra, rb) = cascade_with(&a, &b, p, 5).unwrap();
        assert_eq!(ra.leak_bits, 4 + 5);
        assert_eq!(rb.corrected_key, a);
        assert_eq!(rb.rounds, 6);
        let bits: usize = rb.transcript.iter().map(|e| e.parities.len()).sum();
        assert_eq!(bits as u64, rb.leak_bits);
    }

    #[test]
    fn input_checks() {
        let (a, _) = noisy(128, 0.0, 1);
        let (c, _) = noisy(100, 0.0, 1);
        assert!(matches!(cascade(&a, &c, 0.01, 0), Err(ReconcileError::LengthMismatch(..))));
        let (s, _) = noisy(63, 0.0, 1);
        assert!(matches!(cascade(&s, &s, 0.01, 0), Err(ReconcileError::TooShort(63))));
        assert!(cascade(&a, &a, 0.0, 0).is_err());
        assert!(cascade(&a, &a, 0.25, 0).is_err());
    }

    #[test]
    fn initial_block_formula() {
        assert_eq!(CascadeParams::for_qber(0.02).unwrap().initial_block, 37);
        assert_eq!(CascadeParams::for_qber(0.005).unwrap().initial_block, 146);
        assert_eq!(CascadeParams::for_qber(0.02).unwrap().passes, 4);
    }

    #[test]
    fn corrects_two_percent() {
        for seed in 0..20 {
            let (a, b) = noisy(10_000, 0.02, seed);
            let (ra, rb) = cascade(&a, &b, 0.02, seed).unwrap();
            assert_eq!(ra.leak_bits, rb.leak_bits);
            if rb.verified {
                assert_eq!(rb.corrected_key, a);
            }
        }
    }

    #[test]
    fn deterministic() {
        let (a, b) = noisy(5000, 0.03, 4);
        assert_eq!(cascade(&a, &b, 0.03, 9).unwrap(), cascade(&a, &b, 0.03, 9).unwrap());
    }

    #[test]
    fn tag_lengths() {
        assert_eq!(tag_len(1e-9).unwrap(), 31);
        assert_eq!(tag_len(0.5).unwrap(), 2);
        assert!(tag_len(0.0).is_err());
        let (a, _) = noisy(1000, 0.0, 1);
        let v = verify(&a, &a, 1e-9, 3).unwrap();
        assert!(v.verified);
        assert_eq!(v.tag_bits(), 31);
    }

    #[test]
    fn one_bit_difference_detected() {
        let (a, _) = noisy(2000, 0.0, 8);
        let mut b = a.clone();
        b.flip(1234);
        for seed in 0..2000 {
            assert!(!verify(&a, &b, 1e-9, seed).unwrap().verified);
        }
    }

    #[test]
    fn short_keys_are_padded() {
        let a = Bits::from_bools([true, false, true]);
        let b = Bits::from_bools([true, true, true]);
        assert!(verify(&a, &a, 1e-9, 1).unwrap().verified);
        assert!(!verify(&a, &b, 1e-9, 1).unwrap().verified);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn leak_symmetric_and_accepted_keys_equal(seed in any::<u64>(), q in 0.001f64..0.05) {
            let (a, b) = noisy(2000, q, seed);
            let (ra, rb) = cascade(&a, &b, q.max(0.002), seed).unwrap();
            prop_assert_eq!(ra.leak_bits, rb.leak_bits);
            let bits: usize = rb.transcript.iter().map(|e| e.parities.len()).sum();
            prop_assert_eq!(bits as u64, rb.leak_bits);
            if rb.verified {
                prop_assert_eq!(&rb.corrected_key, &a);
            }
        }
    }
}
