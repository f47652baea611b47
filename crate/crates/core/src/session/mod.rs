//! Two-party post-processing protocol.
//!
//! Message order (A = Alice, B = Bob):
//!
//! ```text
//! A HELLO            -> B HELLO | ABORT(config)
//! B DETECTIONS
//! A BASIS_REVEAL
//! B X_BITS_REVEAL
//! A QBER_SAMPLE      -> B QBER_SAMPLE
//! B EC_PARITY (req)  -> A EC_PARITY (reply)   repeated
//! B EC_DONE          -> A EC_DONE
//! A VERIFY           -> B VERIFY | ABORT(correctness)
//! A PA_SEED | ABORT(insufficient key) -> B PA_SEED (echo, empty seed)
//! ```
//!
//! Either side answers anything unexpected with ABORT(protocol) and stops.
//! Each receive waits at most the per-phase timeout; on expiry the waiting
//! side sends ABORT(timeout).

pub mod transport;
pub mod wire;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amplify::{self, ToeplitzSeed};
use crate::bits::Bits;
use crate::finitekey::{self, KeyLengthBreakdown, Tally};
use crate::model::{Basis, ExperimentConfig, Intensity};
use crate::reconcile::{self, CascadeAlice, CascadeBob, CascadeParams, ParityRequest};
use crate::simulate::{AliceView, BobView};

pub use transport::{channel_pair, Direction, Transcript, Transport, TransportError};
pub use wire::{AbortReason, Message};

/// Cascade needs at least this many key bits.
pub const MIN_KEY_BITS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Alice,
    Bob,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionOptions {
    /// Seeds this party's private randomness (nonce, sample, hash seeds).
    pub seed: u64,
    pub timeout: Duration,
    /// Fraction of Z-sifted bits disclosed to estimate the error rate.
    pub sample_fraction: f64,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            timeout: Duration::from_secs(30),
            sample_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Handshake,
    Detections,
    Sifting,
    Sampling,
    ErrorCorrection,
    Verification,
    Amplification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub phase: Phase,
    pub messages_sent: u64,
    pub messages_received: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortInfo {
    pub reason: AbortReason,
    pub detail: String,
    /// True when the abort was received from the peer.
    pub by_peer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub role: Role,
    /// Key-path Z counts (sample excluded) and all X-sifted counts.
    pub tally: Tally,
    pub breakdown: Option<KeyLengthBreakdown>,
    pub leak_bits: u64,
    pub sample_size: u64,
    pub sample_errors: u64,
    pub qber_hint: Option<f64>,
    pub secret_key: Bits,
    pub phases: Vec<PhaseStats>,
    pub abort: Option<AbortInfo>,
}

impl SessionReport {
    pub fn accepted(&self) -> bool {
        self.abort.is_none()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SiftError {
    #[error("slot {0} was never sent")]
    UnknownSlot(u64),
    #[error("{0} announcements for {1} detections")]
    Coverage(usize, usize),
}

/// Indices into the detection list, split by basis.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sifted {
    pub z: Vec<usize>,
    pub x: Vec<usize>,
}

impl Sifted {
    pub fn discarded(&self, total: usize) -> usize {
        total - self.z.len() - self.x.len()
    }
}

/// Keeps detections whose detector basis matches Alice's preparation basis.
pub fn sift(bob_bases: &[Basis], alice_bases: &[Basis]) -> Result<Sifted, SiftError> {
    if bob_bases.len() != alice_bases.len() {
        return Err(SiftError::Coverage(alice_bases.len(), bob_bases.len()));
    }
    let mut s = Sifted::default();
    for (i, (&b, &a)) in bob_bases.iter().zip(alice_bases).enumerate() {
        match (a, b) {
            (Basis::Z, Basis::Z) => s.z.push(i),
            (Basis::X, Basis::X) => s.x.push(i),
            _ => {}
        }
    }
    Ok(s)
}

/// Alice's basis and intensity for each reported slot.
pub fn announce(view: &AliceView, slots: &[u64]) -> Result<(Vec<Basis>, Vec<Intensity>), SiftError> {
    let mut bases = Vec::with_capacity(slots.len());
    let mut ints = Vec::with_capacity(slots.len());
    for &s in slots {
        let a = view.slots.get(s as usize).ok_or(SiftError::UnknownSlot(s))?;
        bases.push(a.basis);
        ints.push(a.intensity);
    }
    Ok((bases, ints))
}

/// Number of disclosed sample bits for `n` Z-sifted detections.
pub fn sample_size(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).ceil() as usize).min(n)
}

/// Cascade hint from `k` errors in `m` sample bits: `(k + 1) / (2m)`. The
/// shrinkage keeps the estimate on the low side, where Cascade's leak is
/// least sensitive to misestimation.
pub fn qber_hint(k: usize, m: usize) -> f64 {
    if m == 0 {
        return 0.01;
    }
    (0.5 * (k as f64 + 1.0) / m as f64).clamp(1e-4, 0.2)
}

fn basis_bits(v: &[Basis]) -> Bits {
    v.iter().map(|&b| b == Basis::X).collect()
}

fn basis_from_bits(b: &Bits) -> Vec<Basis> {
    b.iter().map(|x| if x { Basis::X } else { Basis::Z }).collect()
}

#[derive(Debug)]
enum Stop {
    Local(AbortReason, String),
    Peer(AbortReason, String),
}

fn local(reason: AbortReason, detail: impl Into<String>) -> Stop {
    Stop::Local(reason, detail.into())
}

fn protocol(detail: impl Into<String>) -> Stop {
    local(AbortReason::Protocol, detail)
}

struct Party<'a, T> {
    transport: T,
    cfg: &'a ExperimentConfig,
    opts: &'a SessionOptions,
    report: SessionReport,
    phase_start: Instant,
    closed: bool,
}

impl<'a, T: Transport> Party<'a, T> {
    fn new(role: Role, transport: T, cfg: &'a ExperimentConfig, opts: &'a SessionOptions) -> Self {
        Self {
            transport,
            cfg,
            opts,
            report: SessionReport {
                role,
                tally: Tally::new(cfg.protocol),
                breakdown: None,
                leak_bits: 0,
                sample_size: 0,
                sample_errors: 0,
                qber_hint: None,
                secret_key: Bits::new(),
                phases: Vec::new(),
                abort: None,
            },
            phase_start: Instant::now(),
            closed: false,
        }
    }

    fn phase(&mut self, phase: Phase) {
        self.close_phase();
        self.phase_start = Instant::now();
        self.report.phases.push(PhaseStats {
            phase,
            messages_sent: 0,
            messages_received: 0,
            bytes_sent: 0,
            bytes_received: 0,
            elapsed_s: 0.0,
        });
    }

    fn close_phase(&mut self) {
        if let Some(p) = self.report.phases.last_mut() {
            p.elapsed_s = self.phase_start.elapsed().as_secs_f64();
        }
    }

    fn current(&mut self) -> Option<&mut PhaseStats> {
        self.report.phases.last_mut()
    }

    fn send(&mut self, msg: &Message) -> Result<(), Stop> {
        let frame = wire::encode_frame(msg);
        if let Some(p) = self.current() {
            p.messages_sent += 1;
            p.bytes_sent += frame.len() as u64;
        }
        self.transport.send(&frame).map_err(|e| {
            self.closed = true;
            protocol(format!("send failed: {e}"))
        })
    }

    fn recv(&mut self) -> Result<Message, Stop> {
        let frame = match self.transport.recv(self.opts.timeout) {
            Ok(f) => f,
            Err(TransportError::Timeout) => {
                return Err(local(AbortReason::Timeout, "no message within the phase timeout"));
            }
            Err(TransportError::Closed) => {
                self.closed = true;
                return Err(protocol("peer closed the connection"));
            }
            Err(e) => return Err(protocol(e.to_string())),
        };
        if let Some(p) = self.current() {
            p.messages_received += 1;
            p.bytes_received += frame.len() as u64;
        }
        match wire::decode_frame(&frame) {
            Ok(Message::Abort { reason, detail }) => Err(Stop::Peer(reason, detail)),
            Ok(m) => Ok(m),
            Err(e) => Err(protocol(format!("bad frame: {e}"))),
        }
    }

    fn unexpected(&self, m: &Message) -> Stop {
        let phase = self.report.phases.last().map(|p| p.phase);
        protocol(format!("unexpected {} during {:?}", m.name(), phase))
    }

    fn finish(mut self, result: Result<(), Stop>) -> SessionReport {
        self.close_phase();
        match result {
            Ok(()) => {}
            Err(Stop::Local(reason, detail)) => {
                if !self.closed {
                    let _ = self.transport.send(&wire::encode_frame(&Message::Abort {
                        reason,
                        detail: detail.clone(),
                    }));
                }
                self.abort(reason, detail, false);
            }
            Err(Stop::Peer(reason, detail)) => self.abort(reason, detail, true),
        }
        self.report
    }

    fn abort(&mut self, reason: AbortReason, detail: String, by_peer: bool) {
        self.report.secret_key = Bits::new();
        self.report.abort = Some(AbortInfo { reason, detail, by_peer });
    }

    fn hello(&self, nonce: u64) -> Message {
        Message::Hello {
            version: wire::VERSION,
            digest: self.cfg.digest(),
            nonce,
        }
    }

    fn check_hello(&self, m: Message) -> Result<u64, Stop> {
        match m {
            Message::Hello { version, digest, nonce } => {
                if version != wire::VERSION {
                    return Err(local(AbortReason::Config, format!("protocol version {version}")));
                }
                if digest != self.cfg.digest() {
                    return Err(local(AbortReason::Config, "config digest mismatch"));
                }
                Ok(nonce)
            }
            m => Err(self.unexpected(&m)),
        }
    }

    fn add_x_tally(&mut self, intensities: &[Intensity], x_idx: &[usize], x_errors: &Bits) {
        for (j, &i) in x_idx.iter().enumerate() {
            self.report.tally.add(Basis::X, intensities[i], 1, x_errors.get(j) as u64);
        }
    }

    fn add_z_tally(&mut self, key_ints: &[Intensity], errors: [u64; 2]) -> Result<(), Stop> {
        for k in Intensity::ALL {
            let n = key_ints.iter().filter(|&&x| x == k).count() as u64;
            if errors[k.index()] > n {
                return Err(protocol("error count exceeds detections"));
            }
            self.report.tally.add(Basis::Z, k, n, errors[k.index()]);
        }
        Ok(())
    }

    /// Splits Z-sifted positions into the disclosed sample and the key path.
    fn key_path(z_idx: &[usize], sample: &[u64]) -> Vec<usize> {
        let mut s = sample.iter().peekable();
        z_idx
            .iter()
            .enumerate()
            .filter(|(j, _)| {
                if s.peek().is_some_and(|&&v| v as usize == *j) {
                    s.next();
                    false
                } else {
                    true
                }
            })
            .map(|(_, &i)| i)
            .collect()
    }
}

/// Input for one party.
#[derive(Debug, Clone, Copy)]
pub enum PartyInput<'a> {
    Alice(&'a AliceView),
    Bob(&'a BobView),
}

pub fn run_session<T: Transport>(
    input: PartyInput<'_>,
    transport: T,
    cfg: &ExperimentConfig,
    opts: &SessionOptions,
) -> SessionReport {
    match input {
        PartyInput::Alice(v) => run_alice(transport, cfg, v, opts),
        PartyInput::Bob(v) => run_bob(transport, cfg, v, opts),
    }
}

pub fn run_alice<T: Transport>(transport: T, cfg: &ExperimentConfig, view: &AliceView, opts: &SessionOptions) -> SessionReport {
    let mut p = Party::new(Role::Alice, transport, cfg, opts);
    let r = alice_flow(&mut p, view);
    p.finish(r)
}

pub fn run_bob<T: Transport>(transport: T, cfg: &ExperimentConfig, view: &BobView, opts: &SessionOptions) -> SessionReport {
    let mut p = Party::new(Role::Bob, transport, cfg, opts);
    let r = bob_flow(&mut p, view);
    p.finish(r)
}

fn alice_flow<T: Transport>(p: &mut Party<'_, T>, view: &AliceView) -> Result<(), Stop> {
    let mut rng = ChaCha20Rng::seed_from_u64(p.opts.seed);
    let nonce_a: u64 = rng.random();

    p.phase(Phase::Handshake);
    p.send(&p.hello(nonce_a))?;
    let m = p.recv()?;
    let nonce_b = p.check_hello(m)?;

    p.phase(Phase::Detections);
    let (slots, bob_bases) = match p.recv()? {
        Message::Detections { slots, bases } => (slots, basis_from_bits(&bases)),
        m => return Err(p.unexpected(&m)),
    };
    let (alice_bases, intensities) = announce(view, &slots).map_err(|e| protocol(e.to_string()))?;

    p.phase(Phase::Sifting);
    p.send(&Message::BasisReveal {
        bases: basis_bits(&alice_bases),
        intensities: intensities.iter().map(|&k| k == Intensity::Decoy).collect(),
    })?;
    let sifted = sift(&bob_bases, &alice_bases).map_err(|e| protocol(e.to_string()))?;
    let x_errors = match p.recv()? {
        Message::XBitsReveal { bits } if bits.len() == sifted.x.len() => bits,
        m => return Err(p.unexpected(&m)),
    };
    p.add_x_tally(&intensities, &sifted.x, &x_errors);

    p.phase(Phase::Sampling);
    let z_bits: Vec<bool> = sifted.z.iter().map(|&i| view.slots[slots[i] as usize].bit).collect();
    let m = sample_size(z_bits.len(), p.opts.sample_fraction);
    let mut sample: Vec<u64> = rand::seq::index::sample(&mut rng, z_bits.len(), m)
        .into_iter()
        .map(|i| i as u64)
        .collect();
    sample.sort_unstable();
    let mine: Bits = sample.iter().map(|&j| z_bits[j as usize]).collect();
    p.send(&Message::QberSample {
        indices: sample.clone(),
        bits: mine.clone(),
    })?;
    let theirs = match p.recv()? {
        Message::QberSample { indices, bits } if indices == sample && bits.len() == m => bits,
        m => return Err(p.unexpected(&m)),
    };
    let k = mine.hamming(&theirs);
    let hint = qber_hint(k, m);
    p.report.sample_size = m as u64;
    p.report.sample_errors = k as u64;
    p.report.qber_hint = Some(hint);

    let key_idx = Party::<T>::key_path(&sifted.z, &sample);
    if key_idx.len() < MIN_KEY_BITS {
        return Err(local(AbortReason::InsufficientKey, "too few sifted bits"));
    }
    let key: Bits = key_idx.iter().map(|&i| view.slots[slots[i] as usize].bit).collect();
    let key_ints: Vec<Intensity> = key_idx.iter().map(|&i| intensities[i]).collect();

    p.phase(Phase::ErrorCorrection);
    let params = CascadeParams::for_qber(hint).map_err(|e| protocol(e.to_string()))?;
    let mut cascade = CascadeAlice::new(key, params, nonce_a ^ nonce_b);
    let mut round = 0u32;
    let errors = loop {
        match p.recv()? {
            Message::EcParity {
                round: r,
                pass,
                blocks,
                parities,
            } if r == round && parities.is_empty() => {
                let par = cascade
                    .answer(&ParityRequest { pass, blocks })
                    .map_err(|e| protocol(e.to_string()))?;
                p.send(&Message::EcParity {
                    round,
                    pass,
                    blocks: Vec::new(),
                    parities: par,
                })?;
                round += 1;
            }
            Message::EcDone { leak, errors } => {
                if leak != cascade.leak_bits() {
                    return Err(protocol(format!("leak {leak} disagrees with {}", cascade.leak_bits())));
                }
                break errors;
            }
            m => return Err(p.unexpected(&m)),
        }
    };
    let leak = cascade.leak_bits();
    p.report.leak_bits = leak;
    p.add_z_tally(&key_ints, errors)?;
    p.send(&Message::EcDone { leak, errors })?;

    p.phase(Phase::Verification);
    let key = cascade.key().clone();
    let vseed: u64 = rng.random();
    let tag = reconcile::verify_tag(&key, p.cfg.security.eps_cor, vseed).map_err(|e| protocol(e.to_string()))?;
    p.send(&Message::Verify {
        seed: vseed,
        tag: tag.clone(),
    })?;
    match p.recv()? {
        Message::Verify { seed, tag: t } if seed == vseed && t == tag => {}
        m => return Err(p.unexpected(&m)),
    }

    p.phase(Phase::Amplification);
    let breakdown = finitekey::secret_key_length(&p.report.tally, &p.cfg.security, leak as f64);
    p.report.breakdown = Some(breakdown);
    let ell = breakdown.ell as usize;
    if ell == 0 {
        return Err(local(AbortReason::InsufficientKey, "secret key length is zero"));
    }
    let seed_bits = Bits::random(key.len() + ell - 1, &mut rng);
    p.send(&Message::PaSeed {
        out_len: ell as u64,
        seed: seed_bits.clone(),
    })?;
    match p.recv()? {
        Message::PaSeed { out_len, seed } if out_len == ell as u64 && seed.is_empty() => {}
        m => return Err(p.unexpected(&m)),
    }
    let ts = ToeplitzSeed::new(seed_bits, key.len(), ell).map_err(|e| protocol(e.to_string()))?;
    p.report.secret_key = amplify::toeplitz_hash(&key, &ts).map_err(|e| protocol(e.to_string()))?;
    Ok(())
}

fn bob_flow<T: Transport>(p: &mut Party<'_, T>, view: &BobView) -> Result<(), Stop> {
    let mut rng = ChaCha20Rng::seed_from_u64(p.opts.seed ^ 0xb0b0_b0b0_b0b0_b0b0);
    let nonce_b: u64 = rng.random();

    p.phase(Phase::Handshake);
    let m = p.recv()?;
    let nonce_a = p.check_hello(m)?;
    p.send(&p.hello(nonce_b))?;

    p.phase(Phase::Detections);
    let slots: Vec<u64> = view.events.iter().map(|e| e.slot).collect();
    let bob_bases: Vec<Basis> = view.events.iter().map(|e| e.basis).collect();
    p.send(&Message::Detections {
        slots,
        bases: basis_bits(&bob_bases),
    })?;

    p.phase(Phase::Sifting);
    let n = view.events.len();
    let (alice_bases, intensities) = match p.recv()? {
        Message::BasisReveal { bases, intensities } if bases.len() == n => (
            basis_from_bits(&bases),
            intensities
                .iter()
                .map(|d| if d { Intensity::Decoy } else { Intensity::Signal })
                .collect::<Vec<_>>(),
        ),
        m => return Err(p.unexpected(&m)),
    };
    let sifted = sift(&bob_bases, &alice_bases).map_err(|e| protocol(e.to_string()))?;
    let x_bits: Bits = sifted.x.iter().map(|&i| view.events[i].bit).collect();
    p.send(&Message::XBitsReveal { bits: x_bits.clone() })?;
    p.add_x_tally(&intensities, &sifted.x, &x_bits);

    p.phase(Phase::Sampling);
    let z_bits: Vec<bool> = sifted.z.iter().map(|&i| view.events[i].bit).collect();
    let m = sample_size(z_bits.len(), p.opts.sample_fraction);
    let (sample, theirs) = match p.recv()? {
        Message::QberSample { indices, bits }
            if indices.len() == m
                && indices.windows(2).all(|w| w[0] < w[1])
                && indices.last().is_none_or(|&l| (l as usize) < z_bits.len()) =>
        {
            (indices, bits)
        }
        m => return Err(p.unexpected(&m)),
    };
    let mine: Bits = sample.iter().map(|&j| z_bits[j as usize]).collect();
    p.send(&Message::QberSample {
        indices: sample.clone(),
        bits: mine.clone(),
    })?;
    let k = mine.hamming(&theirs);
    let hint = qber_hint(k, m);
    p.report.sample_size = m as u64;
    p.report.sample_errors = k as u64;
    p.report.qber_hint = Some(hint);

    let key_idx = Party::<T>::key_path(&sifted.z, &sample);
    if key_idx.len() < MIN_KEY_BITS {
        return Err(local(AbortReason::InsufficientKey, "too few sifted bits"));
    }
    let raw: Bits = key_idx.iter().map(|&i| view.events[i].bit).collect();
    let key_ints: Vec<Intensity> = key_idx.iter().map(|&i| intensities[i]).collect();

    p.phase(Phase::ErrorCorrection);
    let params = CascadeParams::for_qber(hint).map_err(|e| protocol(e.to_string()))?;
    let mut cascade = CascadeBob::new(raw.clone(), params, nonce_a ^ nonce_b);
    let mut round = 0u32;
    while let Some(req) = cascade.next_request() {
        p.send(&Message::EcParity {
            round,
            pass: req.pass,
            blocks: req.blocks,
            parities: Bits::new(),
        })?;
        match p.recv()? {
            Message::EcParity {
                round: r, blocks, parities, ..
            } if r == round && blocks.is_empty() => {
                cascade.receive(&parities).map_err(|e| protocol(e.to_string()))?;
            }
            m => return Err(p.unexpected(&m)),
        }
        round += 1;
    }
    let key = cascade.key().clone();
    let mut errors = [0u64; 2];
    for (i, &k) in key_ints.iter().enumerate() {
        if key.get(i) != raw.get(i) {
            errors[k.index()] += 1;
        }
    }
    let leak = cascade.leak_bits();
    p.report.leak_bits = leak;
    p.add_z_tally(&key_ints, errors)?;
    p.send(&Message::EcDone { leak, errors })?;
    match p.recv()? {
        Message::EcDone { leak: l, errors: e } if l == leak && e == errors => {}
        m => return Err(p.unexpected(&m)),
    }

    p.phase(Phase::Verification);
    let (vseed, tag) = match p.recv()? {
        Message::Verify { seed, tag } => (seed, tag),
        m => return Err(p.unexpected(&m)),
    };
    let mine = reconcile::verify_tag(&key, p.cfg.security.eps_cor, vseed).map_err(|e| protocol(e.to_string()))?;
    if mine != tag {
        return Err(local(AbortReason::Correctness, "verification tags differ"));
    }
    p.send(&Message::Verify { seed: vseed, tag: mine })?;

    p.phase(Phase::Amplification);
    let breakdown = finitekey::secret_key_length(&p.report.tally, &p.cfg.security, leak as f64);
    p.report.breakdown = Some(breakdown);
    let ell = breakdown.ell as usize;
    let seed_bits = match p.recv()? {
        Message::PaSeed { out_len, seed }
            if ell > 0 && out_len == ell as u64 && seed.len() == key.len() + ell - 1 =>
        {
            seed
        }
        m => return Err(p.unexpected(&m)),
    };
    p.send(&Message::PaSeed {
        out_len: ell as u64,
        seed: Bits::new(),
    })?;
    let ts = ToeplitzSeed::new(seed_bits, key.len(), ell).map_err(|e| protocol(e.to_string()))?;
    p.report.secret_key = amplify::toeplitz_hash(&key, &ts).map_err(|e| protocol(e.to_string()))?;
    Ok(())
}

/// Both parties of one in-process run plus Alice's transcript.
#[derive(Debug, Clone)]
pub struct InProcessRun {
    pub alice: SessionReport,
    pub bob: SessionReport,
    pub transcript: Transcript,
}

pub fn run_in_process(cfg: &ExperimentConfig, alice: &AliceView, bob: &BobView, opts: &SessionOptions) -> InProcessRun {
    run_pair(cfg, cfg, alice, bob, opts)
}

/// In-process run where each party may hold a different configuration.
pub fn run_pair(
    cfg_alice: &ExperimentConfig,
    cfg_bob: &ExperimentConfig,
    alice: &AliceView,
    bob: &BobView,
    opts: &SessionOptions,
) -> InProcessRun {
    let (ta, tb) = channel_pair();
    let (ta, log) = transport::Recording::new(ta);
    let (ra, rb) = std::thread::scope(|s| {
        let hb = s.spawn(|| run_bob(tb, cfg_bob, bob, opts));
        let ra = run_alice(ta, cfg_alice, alice, opts);
        (ra, hb.join().expect("bob thread"))
    });
    let transcript = std::mem::take(&mut *log.lock().unwrap());
    InProcessRun {
        alice: ra,
        bob: rb,
        transcript,
    }
}

/// One line per frame: direction, type name, length and the first 16 hex
/// digits of the frame's SHA-256.
pub fn format_transcript(t: &Transcript) -> String {
    use sha2::{Digest, Sha256};
    let mut out = String::new();
    for (dir, frame) in t {
        let arrow = match dir {
            Direction::Sent => '>',
            Direction::Received => '<',
        };
        let name = frame.get(4).map(|&c| wire::type_name(c)).unwrap_or("?");
        let digest = Sha256::digest(frame);
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        out.push_str(&format!("{arrow} {name} {} {hex}\n", frame.len()));
    }
    out
}
