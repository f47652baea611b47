//! Closed-form channel and detector statistics.
//!
//! Photon numbers are Poissonian with mean `k` (the intensity). Each photon
//! independently survives the fiber with probability `t` and reaches a
//! given detector with efficiency `eta_b`, so the signal-click probability is
//! `1 - exp(-k t eta_b)`. Each detector also fires on its own with dark
//! probability `p_dc` per slot. The resulting per-pulse probabilities are
//!
//! ```text
//! D = 1 - (1 - p_dc) exp(-k t eta_b)
//! E = e_b (1 - exp(-k t eta_b)) + 1/2 p_dc exp(-k t eta_b)
//! ```
//!
//! A signal click errs with the basis error floor `e_b`; a dark-only click
//! is a coin flip. `eta_b` folds in Bob's passive basis split and, for X,
//! the single monitored interferometer port (a further factor 1/2).

use serde::{Deserialize, Serialize};

use crate::finitekey::{self, BoundEstimator, KeyLengthBreakdown, Tally};
use crate::model::{Basis, ExperimentConfig, Intensity, ProtocolParams, SecurityParams};
use crate::optimize::{self, SearchSpace};

/// Seconds in the one-day accumulation window used by the idealized model.
pub const ONE_DAY_S: f64 = 86_400.0;

pub fn total_loss_db(channel: &crate::model::ChannelParams) -> f64 {
    channel.atten_db_per_km * channel.length_km + channel.extra_loss_db
}

pub fn transmittance(channel: &crate::model::ChannelParams) -> f64 {
    10f64.powf(-total_loss_db(channel) / 10.0)
}

/// Probability that Gaussian timing jitter pushes a detection past the bin
/// edge: `erfc(halfwidth / (sqrt(2) sigma))`.
pub fn jitter_error_prob(det: &crate::model::DetectorParams) -> f64 {
    if det.jitter_sigma_s <= 0.0 {
        return 0.0;
    }
    libm::erfc(det.bin_halfwidth_s / (std::f64::consts::SQRT_2 * det.jitter_sigma_s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReceiverLayout {
    /// One detector behind one output port of the X interferometer.
    SingleXPort,
    /// Both X outcomes monitored (textbook BB84 receiver).
    DualXPort,
}

/// Bob's receiver as seen by the statistics: efficiencies, darks, error floors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Receiver {
    pub efficiency: f64,
    pub p_z_bob: f64,
    pub dark_prob: f64,
    pub z_error: f64,
    pub x_error: f64,
    pub layout: ReceiverLayout,
}

impl Receiver {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let d = &cfg.detector;
        Self {
            efficiency: d.efficiency,
            p_z_bob: cfg.protocol.p_z_bob,
            dark_prob: d.dark_rate_hz * d.gate_window_s,
            z_error: (d.intrinsic_error + jitter_error_prob(d)).min(0.5),
            x_error: d.phase_misalignment,
            layout: ReceiverLayout::SingleXPort,
        }
    }

    /// Noiseless, unit-efficiency BB84 receiver with symmetric bases.
    pub fn idealized() -> Self {
        Self {
            efficiency: 1.0,
            p_z_bob: 0.5,
            dark_prob: 0.0,
            z_error: 0.0,
            x_error: 0.0,
            layout: ReceiverLayout::DualXPort,
        }
    }

    /// Probability that a photon reaching Bob is registered by the `basis` detector.
    pub fn basis_efficiency(&self, basis: Basis) -> f64 {
        match basis {
            Basis::Z => self.efficiency * self.p_z_bob,
            Basis::X => {
                let port = match self.layout {
                    ReceiverLayout::SingleXPort => 0.5,
                    ReceiverLayout::DualXPort => 1.0,
                };
                self.efficiency * (1.0 - self.p_z_bob) * port
            }
        }
    }

    pub fn base_error(&self, basis: Basis) -> f64 {
        match basis {
            Basis::Z => self.z_error,
            Basis::X => self.x_error,
        }
    }

    /// Click probability of the `basis` detector for an `n`-photon pulse.
    pub fn click_prob(&self, n: u32, t: f64, basis: Basis) -> f64 {
        let miss = (1.0 - t * self.basis_efficiency(basis)).powi(n as i32);
        1.0 - (1.0 - self.dark_prob) * miss
    }

    /// Joint probability of a click and an error for an `n`-photon pulse
    /// prepared in `basis`.
    pub fn click_error_prob(&self, n: u32, t: f64, basis: Basis) -> f64 {
        let miss = (1.0 - t * self.basis_efficiency(basis)).powi(n as i32);
        self.base_error(basis) * (1.0 - miss) + 0.5 * self.dark_prob * miss
    }
}

/// `D` for intensity `k` at transmittance `t`.
pub fn detection_prob(k: f64, t: f64, rx: &Receiver, basis: Basis) -> f64 {
    let survive = (-k * t * rx.basis_efficiency(basis)).exp();
    1.0 - (1.0 - rx.dark_prob) * survive
}

/// `E` for intensity `k` at transmittance `t`; `E <= D` always.
pub fn expected_error_prob(k: f64, t: f64, rx: &Receiver, basis: Basis) -> f64 {
    let survive = (-k * t * rx.basis_efficiency(basis)).exp();
    rx.base_error(basis) * (1.0 - survive) + 0.5 * rx.dark_prob * survive
}

/// Expected per-pulse statistics of one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedTally {
    pub protocol: ProtocolParams,
    /// `D[basis][intensity]`: detection probability per pulse of that
    /// intensity prepared (and measured) in that basis.
    pub detection: [[f64; 2]; 2],
    /// `E[basis][intensity]`, same conditioning as `detection`.
    pub error: [[f64; 2]; 2],
    /// Pulses sent per block.
    pub pulses: f64,
    pub block_time_s: f64,
}

impl ExpectedTally {
    /// Fraction of all pulses that end up as sifted Z detections.
    pub fn sifted_z_per_pulse(&self) -> f64 {
        self.sifted_per_pulse(Basis::Z)
    }

    pub fn sifted_per_pulse(&self, basis: Basis) -> f64 {
        Intensity::ALL
            .iter()
            .map(|&k| self.category_prob(basis, k) * self.detection[basis.index()][k.index()])
            .sum()
    }

    /// Probability that a pulse is prepared in `basis` with intensity `k`.
    pub fn category_prob(&self, basis: Basis, k: Intensity) -> f64 {
        self.protocol.alice_basis_prob(basis) * self.protocol.intensity_prob(k)
    }

    /// Expected `(detections, errors)` for one category over the block.
    pub fn expected_counts(&self, basis: Basis, k: Intensity) -> (f64, f64) {
        let n = self.pulses * self.category_prob(basis, k);
        (
            n * self.detection[basis.index()][k.index()],
            n * self.error[basis.index()][k.index()],
        )
    }

    pub fn qber(&self, basis: Basis) -> f64 {
        let (mut d, mut e) = (0.0, 0.0);
        for k in Intensity::ALL {
            let (dk, ek) = self.expected_counts(basis, k);
            d += dk;
            e += ek;
        }
        if d > 0.0 {
            e / d
        } else {
            0.0
        }
    }

    /// Deterministic tally: expected counts rounded to the nearest integer.
    pub fn to_tally(&self) -> Tally {
        let mut tally = Tally::new(self.protocol);
        for b in Basis::ALL {
            for k in Intensity::ALL {
                let (d, e) = self.expected_counts(b, k);
                let d = d.round() as u64;
                let e = (e.round() as u64).min(d);
                tally.add(b, k, d, e);
            }
        }
        tally
    }
}

fn expected_for_pulses(protocol: &ProtocolParams, t: f64, rx: &Receiver, pulses: f64) -> ExpectedTally {
    let mut detection = [[0.0; 2]; 2];
    let mut error = [[0.0; 2]; 2];
    for b in Basis::ALL {
        for k in Intensity::ALL {
            let mu = protocol.mean_photon_number(k);
            detection[b.index()][k.index()] = detection_prob(mu, t, rx, b);
            error[b.index()][k.index()] = expected_error_prob(mu, t, rx, b);
        }
    }
    ExpectedTally {
        protocol: *protocol,
        detection,
        error,
        pulses,
        block_time_s: pulses / protocol.pulse_rate,
    }
}

/// Expected statistics of a block holding `n_z_target` sifted Z detections.
/// Block time is infinite when the Z detection probability is zero.
pub fn expected_tally(cfg: &ExperimentConfig) -> ExpectedTally {
    let t = transmittance(&cfg.channel);
    let rx = Receiver::from_config(cfg);
    let mut out = expected_for_pulses(&cfg.protocol, t, &rx, 0.0);
    let per_pulse = out.sifted_z_per_pulse();
    out.pulses = if per_pulse > 0.0 {
        cfg.block.n_z_target as f64 / per_pulse
    } else {
        f64::INFINITY
    };
    out.block_time_s = out.pulses / cfg.protocol.pulse_rate;
    out
}

/// Analytic rate prediction for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub tally: Tally,
    pub breakdown: KeyLengthBreakdown,
    pub block_time_s: f64,
    /// Sifted Z detections per second.
    pub raw_key_rate: f64,
    pub secret_key_rate: f64,
    pub qber_z: f64,
}

/// Expected tally, analytic leakage `f n_Z h(QBER_Z)` and the finite-key
/// length, evaluated with the deviation terms plugged in at expected counts.
pub fn expected_key_rate(cfg: &ExperimentConfig) -> RateEstimate {
    let expected = expected_tally(cfg);
    rate_from_expected(&expected, &cfg.security, &BoundEstimator::finite(cfg.security.eps_sec))
}

/// Same tally as [`expected_key_rate`] with all finite-size terms removed.
pub fn asymptotic_key_rate(cfg: &ExperimentConfig) -> RateEstimate {
    let expected = expected_tally(cfg);
    rate_from_expected(&expected, &cfg.security, &BoundEstimator::asymptotic())
}

fn rate_from_expected(expected: &ExpectedTally, security: &SecurityParams, est: &BoundEstimator) -> RateEstimate {
    if !expected.block_time_s.is_finite() {
        let tally = Tally::new(expected.protocol);
        let breakdown = finitekey::secret_key_length_with(&tally, security, 0.0, est);
        return RateEstimate {
            tally,
            breakdown,
            block_time_s: f64::INFINITY,
            raw_key_rate: 0.0,
            secret_key_rate: 0.0,
            qber_z: 0.0,
        };
    }
    let tally = expected.to_tally();
    let qber_z = tally.qber(Basis::Z);
    let lambda = finitekey::ec_leakage(finitekey::LeakModel::Analytic {
        efficiency: security.ec_efficiency,
        n_z: tally.detections(Basis::Z),
        qber: qber_z,
    });
    let breakdown = finitekey::secret_key_length_with(&tally, security, lambda, est);
    let block_time_s = expected.block_time_s;
    RateEstimate {
        raw_key_rate: tally.detections(Basis::Z) as f64 / block_time_s,
        secret_key_rate: finitekey::secret_key_rate(&breakdown, block_time_s).unwrap_or(0.0),
        tally,
        breakdown,
        block_time_s,
        qber_z,
    }
}

/// How an idealized block is delimited.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BlockPolicy {
    /// Fixed number of sifted Z detections per block.
    FixedSize(u64),
    /// Fixed accumulation time per block, in seconds.
    FixedTime(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdealizedResult {
    pub length_km: f64,
    pub secret_key_rate: f64,
    pub block_time_s: f64,
    pub protocol: ProtocolParams,
    pub breakdown: KeyLengthBreakdown,
}

/// Finite-key rate of a noiseless BB84 link: unit efficiency, no darks, no
/// optical errors, symmetric basis choice and a two-port X receiver. The
/// key-length engine is the same one used for real data; with no darks the
/// vacuum yield is known to vanish, so the vacuum bounds are pinned to zero.
/// Intensities and the signal probability are optimized per point.
pub fn idealized_bb84_skr(
    length_km: f64,
    atten_db_per_km: f64,
    policy: BlockPolicy,
    pulse_rate: f64,
    security: &SecurityParams,
) -> IdealizedResult {
    let t = 10f64.powf(-atten_db_per_km * length_km / 10.0);
    let rx = Receiver::idealized();
    let est = BoundEstimator::finite(security.eps_sec).with_known_zero_vacuum();
    let template = ProtocolParams {
        mu1: 0.5,
        mu2: 0.1,
        p_mu1: 0.5,
        p_z_alice: 0.5,
        p_z_bob: 0.5,
        pulse_rate,
    };
    let evaluate = |p: &ProtocolParams| -> optimize::Evaluation {
        let mut e = expected_for_pulses(p, t, &rx, 0.0);
        match policy {
            BlockPolicy::FixedSize(n) => {
                let per = e.sifted_z_per_pulse();
                e.pulses = if per > 0.0 { n as f64 / per } else { f64::INFINITY };
            }
            BlockPolicy::FixedTime(s) => e.pulses = pulse_rate * s,
        }
        e.block_time_s = e.pulses / pulse_rate;
        let r = rate_from_expected(&e, security, &est);
        optimize::Evaluation {
            skr: r.secret_key_rate,
            breakdown: r.breakdown,
            block_time_s: r.block_time_s,
        }
    };
    let space = SearchSpace::default().with_fixed_basis(0.5);
    let opts = optimize::SearchOptions::default();
    match optimize::search(&space, &template, evaluate, &opts) {
        Ok(res) => IdealizedResult {
            length_km,
            secret_key_rate: res.skr,
            block_time_s: res.block_time_s,
            protocol: res.best,
            breakdown: res.breakdown,
        },
        Err(optimize::OptimizeError::NoPositiveRate { best, evaluation }) => IdealizedResult {
            length_km,
            secret_key_rate: 0.0,
            block_time_s: evaluation.block_time_s,
            protocol: best,
            breakdown: evaluation.breakdown,
        },
    }
}
