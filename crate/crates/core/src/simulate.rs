//! Monte Carlo blocks with photon-number ground truth.
//!
//! Two samplers share one physical model:
//!
//! * aggregate mode draws counts directly (multinomial pulse split, Poisson
//!   photon numbers, binomial clicks and errors) and scales to blocks of
//!   10^12 pulses and more;
//! * pulsewise mode walks every pulse and emits a [`PulseRecord`] stream for
//!   the session layer.
//!
//! Bob's basis choice is passive: each photon independently reaches the Z
//! detector, the monitored X port, or nothing. Both detectors may fire in
//! the same slot, so a record carries one outcome per detector rather than a
//! single Bob basis.
//!
//! Photon numbers are truncated at [`N_MAX`] with the Poisson tail folded
//! into the last bin.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, Receiver};
use crate::finitekey::{Counts, Tally};
use crate::model::{Basis, ExperimentConfig, Intensity, ProtocolParams};

pub const N_MAX: usize = 10;

/// Largest pulse count accepted by [`simulate_block_pulsewise`].
pub const PULSEWISE_LIMIT: u64 = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("Z-basis detection probability is zero; the block can never fill")]
    ZeroDetectionProbability,
    #[error("{requested} pulses exceeds the pulsewise limit of {limit}")]
    TooManyPulses { requested: u64, limit: u64 },
}

/// Slow sinusoidal modulation of the detection efficiency. The factor
/// swings between 1 and `1 - depth` with the given period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub depth: f64,
    pub period_s: f64,
}

impl Drift {
    pub fn factor(&self, time_s: f64) -> f64 {
        let phase = std::f64::consts::TAU * time_s / self.period_s;
        1.0 - self.depth * 0.5 * (1.0 - phase.cos())
    }
}

/// Per photon number ground truth, indexed `[basis][intensity][n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueTally {
    pub protocol: ProtocolParams,
    pub counts: [[[Counts; N_MAX + 1]; 2]; 2],
    /// For Z detections, the number that would have erred had the same
    /// photon been measured in X, indexed `[intensity][n]`.
    pub phase_errors: [[u64; N_MAX + 1]; 2],
}

impl TrueTally {
    pub fn new(protocol: ProtocolParams) -> Self {
        Self {
            protocol,
            counts: [[[Counts::default(); N_MAX + 1]; 2]; 2],
            phase_errors: [[0; N_MAX + 1]; 2],
        }
    }

    /// Marginal over photon number; equals the observed tally.
    pub fn to_tally(&self) -> Tally {
        let mut t = Tally::new(self.protocol);
        for b in Basis::ALL {
            for k in Intensity::ALL {
                for c in &self.counts[b.index()][k.index()] {
                    t.add(b, k, c.detections, c.errors);
                }
            }
        }
        t
    }

    /// Detections in `basis` from pulses with exactly `n` photons.
    pub fn detections_with(&self, basis: Basis, n: usize) -> u64 {
        Intensity::ALL
            .iter()
            .map(|k| self.counts[basis.index()][k.index()][n].detections)
            .sum()
    }

    pub fn errors_with(&self, basis: Basis, n: usize) -> u64 {
        Intensity::ALL
            .iter()
            .map(|k| self.counts[basis.index()][k.index()][n].errors)
            .sum()
    }

    /// Phase error ratio of the single-photon Z detections.
    pub fn single_photon_phase_error_rate(&self) -> f64 {
        let s1 = self.detections_with(Basis::Z, 1);
        if s1 == 0 {
            return 0.0;
        }
        let e: u64 = self.phase_errors.iter().map(|row| row[1]).sum();
        e as f64 / s1 as f64
    }
}

/// Poisson weights `P(n | mu)` for `n = 0..=N_MAX`, tail folded into the last.
pub fn photon_number_probs(mu: f64) -> [f64; N_MAX + 1] {
    let mut p = [0.0; N_MAX + 1];
    let mut term = (-mu).exp();
    let mut acc = 0.0;
    for (n, slot) in p.iter_mut().enumerate().take(N_MAX) {
        *slot = term;
        acc += term;
        term *= mu / (n + 1) as f64;
    }
    p[N_MAX] = (1.0 - acc).max(0.0);
    p
}

/// Draws a multinomial split of `n` trials by sequential binomials.
fn multinomial<R: Rng + ?Sized>(rng: &mut R, n: u64, probs: &[f64], out: &mut [u64]) {
    let mut left = n;
    let mut mass = 1.0;
    for (i, &p) in probs.iter().enumerate() {
        if i + 1 == probs.len() {
            out[i] = left;
            break;
        }
        let c = if left == 0 || mass <= 0.0 {
            0
        } else {
            binomial(rng, left, (p / mass).clamp(0.0, 1.0))
        };
        out[i] = c;
        left -= c;
        mass -= p;
    }
}

fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Pulses needed for `n_z_target` expected sifted Z detections.
pub fn pulses_for_target(cfg: &ExperimentConfig) -> Result<u64, SimError> {
    let exp = channel::expected_tally(cfg);
    if !exp.pulses.is_finite() {
        return Err(SimError::ZeroDetectionProbability);
    }
    Ok(exp.pulses.round() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimOptions {
    pub drift: Option<Drift>,
}

/// Number of equal time segments used to apply drift in aggregate mode.
const DRIFT_SEGMENTS: u64 = 32;

/// Aggregate block sized for the configured `n_z_target`.
pub fn simulate_block_aggregate(cfg: &ExperimentConfig, seed: u64) -> Result<(Tally, TrueTally), SimError> {
    let pulses = pulses_for_target(cfg)?;
    Ok(simulate_pulses_aggregate(cfg, pulses, seed, &SimOptions::default()))
}

/// Aggregate sample of exactly `pulses` pulses.
pub fn simulate_pulses_aggregate(cfg: &ExperimentConfig, pulses: u64, seed: u64, opts: &SimOptions) -> (Tally, TrueTally) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let p = cfg.protocol;
    let t = channel::transmittance(&cfg.channel);
    let base = Receiver::from_config(cfg);
    let mut truth = TrueTally::new(p);

    let segments: Vec<(u64, f64)> = match opts.drift {
        None => vec![(pulses, 1.0)],
        Some(d) => {
            let per = pulses / DRIFT_SEGMENTS;
            (0..DRIFT_SEGMENTS)
                .map(|s| {
                    let n = if s + 1 == DRIFT_SEGMENTS { pulses - per * s } else { per };
                    let mid = (s as f64 + 0.5) * pulses as f64 / DRIFT_SEGMENTS as f64 / p.pulse_rate;
                    (n, d.factor(mid))
                })
                .collect()
        }
    };

    let categories: Vec<(Basis, Intensity)> = Basis::ALL
        .iter()
        .flat_map(|&b| Intensity::ALL.iter().map(move |&k| (b, k)))
        .collect();
    let cat_probs: Vec<f64> = categories
        .iter()
        .map(|&(b, k)| p.alice_basis_prob(b) * p.intensity_prob(k))
        .collect();

    for (seg_pulses, factor) in segments {
        let mut rx = base;
        rx.efficiency *= factor;
        let mut per_cat = [0u64; 4];
        multinomial(&mut rng, seg_pulses, &cat_probs, &mut per_cat);
        for (ci, &(b, k)) in categories.iter().enumerate() {
            let probs = photon_number_probs(p.mean_photon_number(k));
            let mut per_n = [0u64; N_MAX + 1];
            multinomial(&mut rng, per_cat[ci], &probs, &mut per_n);
            for (n, &c) in per_n.iter().enumerate() {
                let y = rx.click_prob(n as u32, t, b);
                let d = binomial(&mut rng, c, y);
                let e = if y > 0.0 {
                    binomial(&mut rng, d, rx.click_error_prob(n as u32, t, b) / y)
                } else {
                    0
                };
                let cell = &mut truth.counts[b.index()][k.index()][n];
                cell.detections += d;
                cell.errors += e;
                if b == Basis::Z {
                    let ph = phase_error_prob(&rx, n as u32, t);
                    truth.phase_errors[k.index()][n] += binomial(&mut rng, d, ph);
                }
            }
        }
    }
    (truth.to_tally(), truth)
}

/// Error probability an `n`-photon pulse would show at the X detector,
/// given that it clicks.
fn phase_error_prob(rx: &Receiver, n: u32, t: f64) -> f64 {
    let y = rx.click_prob(n, t, Basis::X);
    if y > 0.0 {
        rx.click_error_prob(n, t, Basis::X) / y
    } else {
        0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DetectorOutcome {
    pub clicked: bool,
    /// Registered bit. For the X detector this is the error flag relative
    /// to Alice's single X state.
    pub bit: bool,
}

/// One pulse as seen by an omniscient observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub slot: u64,
    pub alice_basis: Basis,
    /// Key bit for Z states; always `false` for the X state.
    pub alice_bit: bool,
    pub intensity: Intensity,
    pub photons: u8,
    pub z: DetectorOutcome,
    pub x: DetectorOutcome,
}

impl PulseRecord {
    /// Outcome of the detector matching Alice's basis.
    pub fn sifted(&self) -> &DetectorOutcome {
        match self.alice_basis {
            Basis::Z => &self.z,
            Basis::X => &self.x,
        }
    }

    /// Sifted detection.
    pub fn detected(&self) -> bool {
        self.sifted().clicked
    }

    /// Sifted error; implies [`PulseRecord::detected`].
    pub fn error(&self) -> bool {
        let o = self.sifted();
        o.clicked && o.bit != self.alice_bit
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulsewiseBlock {
    pub tally: Tally,
    pub truth: TrueTally,
    pub records: Vec<PulseRecord>,
}

pub fn simulate_block_pulsewise(cfg: &ExperimentConfig, seed: u64, pulses: u64) -> Result<PulsewiseBlock, SimError> {
    simulate_block_pulsewise_with(cfg, seed, pulses, &SimOptions::default())
}

pub fn simulate_block_pulsewise_with(
    cfg: &ExperimentConfig,
    seed: u64,
    pulses: u64,
    opts: &SimOptions,
) -> Result<PulsewiseBlock, SimError> {
    if pulses > PULSEWISE_LIMIT {
        return Err(SimError::TooManyPulses {
            requested: pulses,
            limit: PULSEWISE_LIMIT,
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let p = cfg.protocol;
    let t = channel::transmittance(&cfg.channel);
    let base = Receiver::from_config(cfg);
    let mut truth = TrueTally::new(p);
    let mut records = Vec::with_capacity(pulses as usize);
    let cdf = Intensity::ALL.map(|k| {
        let probs = photon_number_probs(p.mean_photon_number(k));
        let mut acc = 0.0;
        probs.map(|q| {
            acc += q;
            acc
        })
    });

    for slot in 0..pulses {
        let rx = match opts.drift {
            None => base,
            Some(d) => {
                let mut r = base;
                r.efficiency *= d.factor(slot as f64 / p.pulse_rate);
                r
            }
        };
        let alice_basis = if rng.random::<f64>() < p.p_z_alice { Basis::Z } else { Basis::X };
        let alice_bit = alice_basis == Basis::Z && rng.random::<bool>();
        let intensity = if rng.random::<f64>() < p.p_mu1 {
            Intensity::Signal
        } else {
            Intensity::Decoy
        };
        let u: f64 = rng.random();
        let photons = cdf[intensity.index()].iter().position(|&c| u < c).unwrap_or(N_MAX);

        let to_z = t * rx.basis_efficiency(Basis::Z);
        let to_x = t * rx.basis_efficiency(Basis::X);
        let (mut nz, mut nx) = (0u32, 0u32);
        for _ in 0..photons {
            let v: f64 = rng.random();
            if v < to_z {
                nz += 1;
            } else if v < to_z + to_x {
                nx += 1;
            }
        }
        let z = detector(&mut rng, nz > 0, rx.dark_prob, rx.z_error, alice_basis == Basis::Z, alice_bit);
        let x = detector(&mut rng, nx > 0, rx.dark_prob, rx.x_error, alice_basis == Basis::X, false);
        let rec = PulseRecord {
            slot,
            alice_basis,
            alice_bit,
            intensity,
            photons: photons as u8,
            z,
            x,
        };
        if rec.detected() {
            let cell = &mut truth.counts[alice_basis.index()][intensity.index()][photons];
            cell.detections += 1;
            cell.errors += rec.error() as u64;
            if alice_basis == Basis::Z {
                let ph = phase_error_prob(&rx, photons as u32, t);
                truth.phase_errors[intensity.index()][photons] += (rng.random::<f64>() < ph) as u64;
            }
        }
        records.push(rec);
    }
    Ok(PulsewiseBlock {
        tally: truth.to_tally(),
        truth,
        records,
    })
}

/// One threshold detector. A photon click errs with `floor` when the basis
/// matches; otherwise, and for dark-only clicks, the bit is uniform.
fn detector<R: Rng + ?Sized>(rng: &mut R, photon: bool, dark: f64, floor: f64, matched: bool, reference: bool) -> DetectorOutcome {
    let dark_click = dark > 0.0 && rng.random::<f64>() < dark;
    if photon {
        let bit = if matched {
            reference ^ (rng.random::<f64>() < floor)
        } else {
            rng.random()
        };
        DetectorOutcome { clicked: true, bit }
    } else if dark_click {
        DetectorOutcome {
            clicked: true,
            bit: rng.random(),
        }
    } else {
        DetectorOutcome::default()
    }
}

/// What Alice knows: her own choices for every slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliceSlot {
    pub basis: Basis,
    pub bit: bool,
    pub intensity: Intensity,
}

/// One click at one of Bob's detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BobEvent {
    pub slot: u64,
    pub basis: Basis,
    pub bit: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AliceView {
    pub slots: Vec<AliceSlot>,
}

/// Bob's clicks in slot order; a double click yields a Z event then an X event.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BobView {
    pub events: Vec<BobEvent>,
}

pub fn export_bitstreams(records: &[PulseRecord]) -> (AliceView, BobView) {
    let mut alice = AliceView::default();
    let mut bob = BobView::default();
    for r in records {
        alice.slots.push(AliceSlot {
            basis: r.alice_basis,
            bit: r.alice_bit,
            intensity: r.intensity,
        });
        for (basis, o) in [(Basis::Z, r.z), (Basis::X, r.x)] {
            if o.clicked {
                bob.events.push(BobEvent {
                    slot: r.slot,
                    basis,
                    bit: o.bit,
                });
            }
        }
    }
    (alice, bob)
}

/// Rebuilds the observed tally from the two views.
pub fn tally_from_views(protocol: ProtocolParams, alice: &AliceView, bob: &BobView) -> Tally {
    let mut t = Tally::new(protocol);
    for e in &bob.events {
        let a = alice.slots[e.slot as usize];
        if a.basis == e.basis {
            t.add(e.basis, a.intensity, 1, (e.bit != a.bit) as u64);
        }
    }
    t
}

const RECORD_MAGIC: &[u8; 4] = b"QKDP";
const RECORD_VERSION: u16 = 1;
const RECORD_SIZE: u16 = 10;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad record header")]
    BadHeader,
    #[error("record {0} is malformed")]
    BadRecord(u64),
}

/// Writes the record stream: header (magic, version, record size, count)
/// followed by fixed-size records. See `docs/record-format.md`.
pub fn write_records<W: Write>(mut w: W, records: &[PulseRecord]) -> io::Result<()> {
    w.write_all(RECORD_MAGIC)?;
    w.write_all(&RECORD_VERSION.to_le_bytes())?;
    w.write_all(&RECORD_SIZE.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        let flags = (r.alice_basis == Basis::X) as u8
            | (r.alice_bit as u8) << 1
            | ((r.intensity == Intensity::Decoy) as u8) << 2
            | (r.z.clicked as u8) << 3
            | (r.z.bit as u8) << 4
            | (r.x.clicked as u8) << 5
            | (r.x.bit as u8) << 6;
        w.write_all(&r.slot.to_le_bytes())?;
        w.write_all(&[flags, r.photons])?;
    }
    Ok(())
}

pub fn read_records<R: Read>(mut r: R) -> Result<Vec<PulseRecord>, RecordError> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)?;
    if &head[..4] != RECORD_MAGIC
        || u16::from_le_bytes([head[4], head[5]]) != RECORD_VERSION
        || u16::from_le_bytes([head[6], head[7]]) != RECORD_SIZE
    {
        return Err(RecordError::BadHeader);
    }
    let count = u64::from_le_bytes(head[8..16].try_into().unwrap());
    let mut out = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut buf = [0u8; RECORD_SIZE as usize];
    for i in 0..count {
        r.read_exact(&mut buf)?;
        let flags = buf[8];
        let photons = buf[9];
        if flags & 0x80 != 0 || photons as usize > N_MAX {
            return Err(RecordError::BadRecord(i));
        }
        let bit = |s: u8| flags >> s & 1 == 1;
        let rec = PulseRecord {
            slot: u64::from_le_bytes(buf[..8].try_into().unwrap()),
            alice_basis: if bit(0) { Basis::X } else { Basis::Z },
            alice_bit: bit(1),
            intensity: if bit(2) { Intensity::Decoy } else { Intensity::Signal },
            z: DetectorOutcome {
                clicked: bit(3),
                bit: bit(4),
            },
            x: DetectorOutcome {
                clicked: bit(5),
                bit: bit(6),
            },
            photons,
        };
        if (!rec.z.clicked && rec.z.bit) || (!rec.x.clicked && rec.x.bit) {
            return Err(RecordError::BadRecord(i));
        }
        out.push(rec);
    }
    Ok(out)
}
