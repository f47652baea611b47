//! One-decoy finite-key bounds and the secret key length.
//!
//! Everything here is arithmetic on a [`Tally`] of observed counts. Counts
//! per intensity are rescaled to per-photon-number yields through the
//! Poisson weights `tau_n`, with Hoeffding deviations
//! `delta(n, eps) = sqrt(n ln(1/eps) / 2)` on the pooled basis counts.
//!
//! The key length is
//!
//! ```text
//! l = floor( s_Z0 + s_Z1 (1 - h(phi_Z)) - lambda_EC
//!            - 6 log2(19 / eps_sec) - log2(2 / eps_cor) )
//! ```
//!
//! clamped at zero. Every intermediate confidence parameter is
//! `eps_sec / 19`, the per-term share of the `6 log2(19/eps_sec)` budget.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Basis, Intensity, ProtocolParams, SecurityParams};

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("{what} = {value} is outside its domain {domain}")]
    OutOfDomain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },
}

fn out_of_domain(what: &'static str, value: f64, domain: &'static str) -> DomainError {
    DomainError::OutOfDomain { what, value, domain }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub detections: u64,
    pub errors: u64,
}

/// Observed detections and errors per (basis, intensity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub protocol: ProtocolParams,
    cells: [[Counts; 2]; 2],
}

impl Tally {
    pub fn new(protocol: ProtocolParams) -> Self {
        Self {
            protocol,
            cells: [[Counts::default(); 2]; 2],
        }
    }

    pub fn get(&self, basis: Basis, k: Intensity) -> Counts {
        self.cells[basis.index()][k.index()]
    }

    /// Adds counts to one cell. Panics if `errors` would exceed `detections`.
    pub fn add(&mut self, basis: Basis, k: Intensity, detections: u64, errors: u64) {
        let c = &mut self.cells[basis.index()][k.index()];
        c.detections += detections;
        c.errors += errors;
        assert!(c.errors <= c.detections, "errors exceed detections");
    }

    pub fn detections(&self, basis: Basis) -> u64 {
        self.cells[basis.index()].iter().map(|c| c.detections).sum()
    }

    pub fn errors(&self, basis: Basis) -> u64 {
        self.cells[basis.index()].iter().map(|c| c.errors).sum()
    }

    pub fn qber(&self, basis: Basis) -> f64 {
        let n = self.detections(basis);
        if n == 0 {
            0.0
        } else {
            self.errors(basis) as f64 / n as f64
        }
    }

    /// Same tally with every count multiplied by `factor`.
    pub fn scaled(&self, factor: u64) -> Tally {
        let mut out = *self;
        for row in &mut out.cells {
            for c in row {
                c.detections *= factor;
                c.errors *= factor;
            }
        }
        out
    }
}

/// Every intermediate of the key-length formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyLengthBreakdown {
    pub n_z: u64,
    pub qber_z: f64,
    pub s_z0_lower: f64,
    pub s_z0_upper: f64,
    pub s_z1_lower: f64,
    pub s_x0_upper: f64,
    pub s_x1_lower: f64,
    pub vx1_upper: f64,
    pub phi_z_upper: f64,
    pub lambda_ec: f64,
    /// `6 log2(19/eps_sec) + log2(2/eps_cor)`, zero in the asymptotic limit.
    pub eps_terms: f64,
    /// Unfloored, unclamped value of the formula.
    pub ell_real: f64,
    pub ell: u64,
}

pub fn binary_entropy(x: f64) -> Result<f64, DomainError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(out_of_domain("x", x, "[0,1]"));
    }
    Ok(h(x))
}

fn h(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
    }
}

pub fn hoeffding_delta(n: f64, eps: f64) -> Result<f64, DomainError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(out_of_domain("eps", eps, "(0,1)"));
    }
    if !(n >= 0.0) {
        return Err(out_of_domain("n", n, "[0,inf)"));
    }
    Ok((n * (1.0 / eps).ln() / 2.0).sqrt())
}

/// Probability that Alice emits an `n`-photon pulse, averaged over intensities.
pub fn tau_n(n: u32, protocol: &ProtocolParams) -> f64 {
    let fact: f64 = (1..=n).map(f64::from).product();
    Intensity::ALL
        .iter()
        .map(|&k| {
            let mu = protocol.mean_photon_number(k);
            protocol.intensity_prob(k) * (-mu).exp() * mu.powi(n as i32) / fact
        })
        .sum()
}

/// Rescaled count bounds `(e^k / p_k) (c_k +- delta(c_total))`, indexed
/// `[basis][intensity]`; lower variants clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjustedBounds {
    pub n_plus: [[f64; 2]; 2],
    pub n_minus: [[f64; 2]; 2],
    pub m_plus: [[f64; 2]; 2],
    pub m_minus: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Deviation {
    Hoeffding { eps: f64 },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum VacuumModel {
    Estimated,
    /// Vacuum pulses never click (no dark counts); both bounds are zero.
    KnownZero,
}

/// Bound calculator with a fixed deviation model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundEstimator {
    deviation: Deviation,
    vacuum: VacuumModel,
}

impl BoundEstimator {
    /// Finite-size bounds with every confidence parameter at `eps_sec / 19`.
    pub fn finite(eps_sec: f64) -> Self {
        Self::with_eps1(eps_sec / 19.0)
    }

    pub fn with_eps1(eps1: f64) -> Self {
        Self {
            deviation: Deviation::Hoeffding { eps: eps1 },
            vacuum: VacuumModel::Estimated,
        }
    }

    /// No statistical deviations, no `gamma`, no epsilon overhead.
    pub fn asymptotic() -> Self {
        Self {
            deviation: Deviation::None,
            vacuum: VacuumModel::Estimated,
        }
    }

    pub fn with_known_zero_vacuum(mut self) -> Self {
        self.vacuum = VacuumModel::KnownZero;
        self
    }

    pub fn is_finite(&self) -> bool {
        matches!(self.deviation, Deviation::Hoeffding { .. })
    }

    fn delta(&self, n: f64) -> f64 {
        match self.deviation {
            Deviation::Hoeffding { eps } => (n.max(0.0) * (1.0 / eps).ln() / 2.0).sqrt(),
            Deviation::None => 0.0,
        }
    }

    pub fn adjusted(&self, tally: &Tally) -> AdjustedBounds {
        let p = &tally.protocol;
        let mut out = AdjustedBounds {
            n_plus: [[0.0; 2]; 2],
            n_minus: [[0.0; 2]; 2],
            m_plus: [[0.0; 2]; 2],
            m_minus: [[0.0; 2]; 2],
        };
        for b in Basis::ALL {
            let dn = self.delta(tally.detections(b) as f64);
            let dm = self.delta(tally.errors(b) as f64);
            for k in Intensity::ALL {
                let scale = p.mean_photon_number(k).exp() / p.intensity_prob(k);
                let c = tally.get(b, k);
                let (i, j) = (b.index(), k.index());
                out.n_plus[i][j] = scale * (c.detections as f64 + dn);
                out.n_minus[i][j] = (scale * (c.detections as f64 - dn)).max(0.0);
                out.m_plus[i][j] = scale * (c.errors as f64 + dm);
                out.m_minus[i][j] = (scale * (c.errors as f64 - dm)).max(0.0);
            }
        }
        out
    }

    /// Lower bound on vacuum-origin detections in `basis`.
    pub fn vacuum_lower(&self, tally: &Tally, basis: Basis) -> f64 {
        if self.vacuum == VacuumModel::KnownZero {
            return 0.0;
        }
        let p = &tally.protocol;
        let (mu1, mu2) = (p.mu1, p.mu2);
        let a = self.adjusted(tally);
        let i = basis.index();
        let v = tau_n(0, p)
            * (mu1 * a.n_minus[i][Intensity::Decoy.index()] - mu2 * a.n_plus[i][Intensity::Signal.index()])
            / (mu1 - mu2);
        v.max(0.0)
    }

    /// Upper bound on vacuum-origin detections: such clicks err half the time.
    pub fn vacuum_upper(&self, tally: &Tally, basis: Basis) -> f64 {
        if self.vacuum == VacuumModel::KnownZero {
            return 0.0;
        }
        let n = tally.detections(basis) as f64;
        let m = tally.errors(basis) as f64;
        (2.0 * (m + self.delta(n))).min(n)
    }

    /// Lower bound on single-photon detections in `basis`.
    pub fn single_photon_lower(&self, tally: &Tally, basis: Basis) -> f64 {
        let p = &tally.protocol;
        let (mu1, mu2) = (p.mu1, p.mu2);
        if !(mu2 > 0.0 && mu1 > mu2) {
            return 0.0;
        }
        let a = self.adjusted(tally);
        let i = basis.index();
        let (sig, dec) = (Intensity::Signal.index(), Intensity::Decoy.index());
        let tau0 = tau_n(0, p);
        let s0_upper = self.vacuum_upper(tally, basis);
        let ratio = (mu2 * mu2) / (mu1 * mu1);
        let inner = a.n_minus[i][dec] - ratio * a.n_plus[i][sig] - (1.0 - ratio) * s0_upper / tau0;
        let v = tau_n(1, p) * mu1 / (mu2 * (mu1 - mu2)) * inner;
        if v.is_finite() {
            v.max(0.0)
        } else {
            0.0
        }
    }

    /// Upper bound on single-photon errors in X, clamped to `[0, m_X]`.
    pub fn single_photon_errors_upper(&self, tally: &Tally) -> f64 {
        let p = &tally.protocol;
        let (mu1, mu2) = (p.mu1, p.mu2);
        if !(mu1 > mu2) {
            return tally.errors(Basis::X) as f64;
        }
        let a = self.adjusted(tally);
        let x = Basis::X.index();
        let v = tau_n(1, p) * (a.m_plus[x][Intensity::Signal.index()] - a.m_minus[x][Intensity::Decoy.index()])
            / (mu1 - mu2);
        v.clamp(0.0, tally.errors(Basis::X) as f64)
    }

    pub fn phase_error_upper(&self, tally: &Tally) -> f64 {
        let sz1 = self.single_photon_lower(tally, Basis::Z);
        let sx1 = self.single_photon_lower(tally, Basis::X);
        let vx1 = self.single_photon_errors_upper(tally);
        self.phase_error_from(sz1, sx1, vx1)
    }

    fn phase_error_from(&self, sz1: f64, sx1: f64, vx1: f64) -> f64 {
        if !(sz1 > 0.0 && sx1 > 0.0) {
            return 0.5;
        }
        let ratio = vx1 / sx1;
        if ratio >= 0.5 {
            return 0.5;
        }
        let g = match self.deviation {
            Deviation::Hoeffding { eps } => gamma_correction(eps, ratio, sz1, sx1).unwrap_or(0.5),
            Deviation::None => 0.0,
        };
        (ratio + g).min(0.5)
    }

    pub fn breakdown(&self, tally: &Tally, security: &SecurityParams, lambda_ec: f64) -> KeyLengthBreakdown {
        let s_z0_lower = self.vacuum_lower(tally, Basis::Z);
        let s_z0_upper = self.vacuum_upper(tally, Basis::Z);
        let s_x0_upper = self.vacuum_upper(tally, Basis::X);
        let s_z1_lower = self.single_photon_lower(tally, Basis::Z);
        let s_x1_lower = self.single_photon_lower(tally, Basis::X);
        let vx1_upper = self.single_photon_errors_upper(tally);
        let phi_z_upper = self.phase_error_from(s_z1_lower, s_x1_lower, vx1_upper);
        let eps_terms = if self.is_finite() { eps_overhead(security) } else { 0.0 };
        let ell_real = s_z0_lower + s_z1_lower * (1.0 - h(phi_z_upper)) - lambda_ec - eps_terms;
        let n_z = tally.detections(Basis::Z);
        let ell = if ell_real.is_finite() && ell_real > 0.0 {
            (ell_real.floor() as u64).min(n_z)
        } else {
            0
        };
        KeyLengthBreakdown {
            n_z,
            qber_z: tally.qber(Basis::Z),
            s_z0_lower,
            s_z0_upper,
            s_z1_lower,
            s_x0_upper,
            s_x1_lower,
            vx1_upper,
            phi_z_upper,
            lambda_ec,
            eps_terms,
            ell_real,
            ell,
        }
    }
}

pub fn adjusted_count_bounds(tally: &Tally, eps1: f64) -> AdjustedBounds {
    BoundEstimator::with_eps1(eps1).adjusted(tally)
}

pub fn vacuum_lower(tally: &Tally, eps1: f64) -> f64 {
    BoundEstimator::with_eps1(eps1).vacuum_lower(tally, Basis::Z)
}

pub fn vacuum_upper(tally: &Tally, eps1: f64) -> f64 {
    BoundEstimator::with_eps1(eps1).vacuum_upper(tally, Basis::Z)
}

pub fn single_photon_lower(tally: &Tally, basis: Basis, eps1: f64) -> f64 {
    BoundEstimator::with_eps1(eps1).single_photon_lower(tally, basis)
}

pub fn single_photon_errors_upper(tally: &Tally, eps1: f64) -> f64 {
    BoundEstimator::with_eps1(eps1).single_photon_errors_upper(tally)
}

pub fn phase_error_upper(tally: &Tally, eps: f64) -> f64 {
    BoundEstimator::with_eps1(eps).phase_error_upper(tally)
}

/// Random-sampling correction between the X and Z single-photon phase
/// error rates:
///
/// ```text
/// gamma(a,b,c,d) = sqrt( (c+d)(1-b)b / (c d ln 2)
///                        * log2( (c+d) / (c d (1-b) b) * 21^2 / a^2 ) )
/// ```
///
/// Zero at `b` in {0, 1}, and zero when the logarithm goes negative.
pub fn gamma_correction(a: f64, b: f64, c: f64, d: f64) -> Result<f64, DomainError> {
    if !(a > 0.0 && a < 1.0) {
        return Err(out_of_domain("a", a, "(0,1)"));
    }
    if !(0.0..=1.0).contains(&b) {
        return Err(out_of_domain("b", b, "[0,1]"));
    }
    if !(c > 0.0) {
        return Err(out_of_domain("c", c, "(0,inf)"));
    }
    if !(d > 0.0) {
        return Err(out_of_domain("d", d, "(0,inf)"));
    }
    if b == 0.0 || b == 1.0 {
        return Ok(0.0);
    }
    let var = (c + d) * (1.0 - b) * b;
    let arg = (c + d) / (c * d * (1.0 - b) * b) * (21.0 * 21.0) / (a * a);
    let lg = arg.log2();
    if lg <= 0.0 {
        return Ok(0.0);
    }
    Ok((var / (c * d * std::f64::consts::LN_2) * lg).sqrt())
}

/// Source of the error-correction leakage term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeakModel {
    /// `f n_Z h(qber)`.
    Analytic { efficiency: f64, n_z: u64, qber: f64 },
    /// Exact count of disclosed bits from a reconciliation run.
    Measured(u64),
}

pub fn ec_leakage(model: LeakModel) -> f64 {
    match model {
        LeakModel::Analytic { efficiency, n_z, qber } => efficiency * n_z as f64 * h(qber.clamp(0.0, 0.5)),
        LeakModel::Measured(bits) => bits as f64,
    }
}

/// `6 log2(19/eps_sec) + log2(2/eps_cor)`.
pub fn eps_overhead(security: &SecurityParams) -> f64 {
    6.0 * (19.0 / security.eps_sec).log2() + (2.0 / security.eps_cor).log2()
}

pub fn secret_key_length(tally: &Tally, security: &SecurityParams, lambda_ec: f64) -> KeyLengthBreakdown {
    BoundEstimator::finite(security.eps_sec).breakdown(tally, security, lambda_ec)
}

pub fn secret_key_length_with(
    tally: &Tally,
    security: &SecurityParams,
    lambda_ec: f64,
    estimator: &BoundEstimator,
) -> KeyLengthBreakdown {
    estimator.breakdown(tally, security, lambda_ec)
}

/// Key length with every finite-size term removed, same tally and leakage.
pub fn asymptotic_key_length(tally: &Tally, security: &SecurityParams, lambda_ec: f64) -> KeyLengthBreakdown {
    BoundEstimator::asymptotic().breakdown(tally, security, lambda_ec)
}

#[derive(Debug, Error, PartialEq)]
#[error("block time must be positive and finite, got {0}")]
pub struct BlockTimeError(pub f64);

pub fn secret_key_rate(breakdown: &KeyLengthBreakdown, block_time_s: f64) -> Result<f64, BlockTimeError> {
    if !(block_time_s > 0.0 && block_time_s.is_finite()) {
        return Err(BlockTimeError(block_time_s));
    }
    Ok(breakdown.ell as f64 / block_time_s)
}
