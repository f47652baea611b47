//! Configuration types and the `key = value` config format.
//!
//! A config document holds one `section.key = value` pair per line; `#`
//! starts a comment. Reals accept scientific notation. Unknown or duplicate
//! keys are rejected, required keys must be present, and optional keys fall
//! back to the defaults listed in [`KEYS`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Z, Basis::X];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Intensity {
    /// The higher intensity, `mu1`.
    Signal,
    /// The lower intensity, `mu2`.
    Decoy,
}

impl Intensity {
    pub const ALL: [Intensity; 2] = [Intensity::Signal, Intensity::Decoy];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub mu1: f64,
    pub mu2: f64,
    pub p_mu1: f64,
    pub p_z_alice: f64,
    pub p_z_bob: f64,
    /// Pulses per second.
    pub pulse_rate: f64,
}

impl ProtocolParams {
    pub fn mean_photon_number(&self, k: Intensity) -> f64 {
        match k {
            Intensity::Signal => self.mu1,
            Intensity::Decoy => self.mu2,
        }
    }

    pub fn intensity_prob(&self, k: Intensity) -> f64 {
        match k {
            Intensity::Signal => self.p_mu1,
            Intensity::Decoy => 1.0 - self.p_mu1,
        }
    }

    /// Probability that Alice prepares a state in `basis`.
    pub fn alice_basis_prob(&self, basis: Basis) -> f64 {
        match basis {
            Basis::Z => self.p_z_alice,
            Basis::X => 1.0 - self.p_z_alice,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub length_km: f64,
    pub atten_db_per_km: f64,
    pub extra_loss_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub gate_window_s: f64,
    /// Z-basis optical error floor (state preparation, extinction ratio).
    pub intrinsic_error: f64,
    /// X-basis error floor (interferometer visibility).
    pub phase_misalignment: f64,
    pub jitter_sigma_s: f64,
    pub bin_halfwidth_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityParams {
    pub eps_sec: f64,
    pub eps_cor: f64,
    /// Inefficiency factor `f` of the analytic leakage model.
    pub ec_efficiency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockMode {
    /// Blocks feed the finite-key analysis; at least 10^4 Z detections.
    Analysis,
    /// Blocks are only simulated; at least 64 Z detections.
    Simulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    /// Z-basis detections per privacy-amplification block.
    pub n_z_target: u64,
    pub mode: BlockMode,
}

impl BlockConfig {
    pub const MIN_ANALYSIS: u64 = 10_000;
    pub const MIN_SIMULATION: u64 = 64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub protocol: ProtocolParams,
    pub channel: ChannelParams,
    pub detector: DetectorParams,
    pub security: SecurityParams,
    pub block: BlockConfig,
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value `{value}` for `{key}`")]
    InvalidValue { line: usize, key: String, value: String },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("invalid configuration: {}", join(.0))]
    Invalid(Vec<Violation>),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Every recognised key with its default; `None` marks a required key.
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("protocol.mu1", None),
    ("protocol.mu2", None),
    ("protocol.p_mu1", Some("0.7")),
    ("protocol.p_z_alice", Some("0.9")),
    ("protocol.p_z_bob", Some("0.5")),
    ("protocol.pulse_rate", None),
    ("channel.length_km", None),
    ("channel.atten_db_per_km", None),
    ("channel.extra_loss_db", Some("0")),
    ("detector.efficiency", None),
    ("detector.dark_rate_hz", None),
    ("detector.gate_window_s", Some("100e-12")),
    ("detector.intrinsic_error", Some("0.005")),
    ("detector.phase_misalignment", Some("0.011")),
    ("detector.jitter_sigma_s", Some("40e-12")),
    ("detector.bin_halfwidth_s", Some("150e-12")),
    ("security.eps_sec", None),
    ("security.eps_cor", None),
    ("security.ec_efficiency", Some("1.16")),
    ("block.n_z_target", None),
    ("block.mode", Some("analysis")),
];

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut values: Vec<Option<(usize, String)>> = vec![None; KEYS.len()];
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            message: "expected `key = value`".into(),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                message: "empty key or value".into(),
            });
        }
        let slot = KEYS
            .iter()
            .position(|(k, _)| *k == key)
            .ok_or_else(|| ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            })?;
        if values[slot].is_some() {
            return Err(ConfigError::DuplicateKey {
                line,
                key: key.to_string(),
            });
        }
        values[slot] = Some((line, value.to_string()));
    }

    let mut lookup = Lookup { values: &values };
    let cfg = ExperimentConfig {
        protocol: ProtocolParams {
            mu1: lookup.real("protocol.mu1")?,
            mu2: lookup.real("protocol.mu2")?,
            p_mu1: lookup.real("protocol.p_mu1")?,
            p_z_alice: lookup.real("protocol.p_z_alice")?,
            p_z_bob: lookup.real("protocol.p_z_bob")?,
            pulse_rate: lookup.real("protocol.pulse_rate")?,
        },
        channel: ChannelParams {
            length_km: lookup.real("channel.length_km")?,
            atten_db_per_km: lookup.real("channel.atten_db_per_km")?,
            extra_loss_db: lookup.real("channel.extra_loss_db")?,
        },
        detector: DetectorParams {
            efficiency: lookup.real("detector.efficiency")?,
            dark_rate_hz: lookup.real("detector.dark_rate_hz")?,
            gate_window_s: lookup.real("detector.gate_window_s")?,
            intrinsic_error: lookup.real("detector.intrinsic_error")?,
            phase_misalignment: lookup.real("detector.phase_misalignment")?,
            jitter_sigma_s: lookup.real("detector.jitter_sigma_s")?,
            bin_halfwidth_s: lookup.real("detector.bin_halfwidth_s")?,
        },
        security: SecurityParams {
            eps_sec: lookup.real("security.eps_sec")?,
            eps_cor: lookup.real("security.eps_cor")?,
            ec_efficiency: lookup.real("security.ec_efficiency")?,
        },
        block: BlockConfig {
            n_z_target: lookup.count("block.n_z_target")?,
            mode: lookup.parsed("block.mode")?,
        },
    };
    validate(cfg)
}

struct Lookup<'a> {
    values: &'a [Option<(usize, String)>],
}

impl Lookup<'_> {
    fn raw(&mut self, key: &'static str) -> Result<(usize, &str), ConfigError> {
        let slot = KEYS.iter().position(|(k, _)| *k == key).expect("known key");
        match &self.values[slot] {
            Some((line, v)) => Ok((*line, v.as_str())),
            None => KEYS[slot]
                .1
                .map(|d| (0, d))
                .ok_or(ConfigError::MissingKey(key)),
        }
    }

    fn real(&mut self, key: &'static str) -> Result<f64, ConfigError> {
        let (line, v) = self.raw(key)?;
        v.parse::<f64>().map_err(|_| invalid(line, key, v))
    }

    fn count(&mut self, key: &'static str) -> Result<u64, ConfigError> {
        let (line, v) = self.raw(key)?;
        if let Ok(n) = v.parse::<u64>() {
            return Ok(n);
        }
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() && x >= 0.0 && x.fract() == 0.0 && x < 1.8e19 => Ok(x as u64),
            _ => Err(invalid(line, key, v)),
        }
    }

    fn parsed<T: FromStr>(&mut self, key: &'static str) -> Result<T, ConfigError> {
        let (line, v) = self.raw(key)?;
        v.parse::<T>().map_err(|_| invalid(line, key, v))
    }
}

fn invalid(line: usize, key: &str, value: &str) -> ConfigError {
    ConfigError::InvalidValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
    }
}

impl FromStr for BlockMode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "analysis" => Ok(BlockMode::Analysis),
            "simulation" => Ok(BlockMode::Simulation),
            _ => Err(()),
        }
    }
}

impl fmt::Display for BlockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockMode::Analysis => "analysis",
            BlockMode::Simulation => "simulation",
        })
    }
}

/// Checks every invariant and returns the config unchanged, or all the
/// violations found.
pub fn validate(cfg: ExperimentConfig) -> Result<ExperimentConfig, ConfigError> {
    let mut v = Vec::new();
    let mut check = |ok: bool, field: &'static str, message: &str| {
        if !ok {
            v.push(Violation {
                field,
                message: message.to_string(),
            });
        }
    };
    let p = &cfg.protocol;
    let finite = |x: f64| x.is_finite();
    let open_unit = |x: f64| x > 0.0 && x < 1.0;
    const OPEN: &str = "probability must lie strictly inside (0,1)";

    check(finite(p.mu1) && p.mu1 > 0.0, "protocol.mu1", "must be positive");
    check(p.mu1 <= 1.0, "protocol.mu1", "must not exceed 1.0");
    check(finite(p.mu2) && p.mu2 > 0.0, "protocol.mu2", "must be positive");
    check(p.mu1 > p.mu2, "protocol.mu1", "mu1 must exceed mu2");
    check(open_unit(p.p_mu1), "protocol.p_mu1", OPEN);
    check(open_unit(p.p_z_alice), "protocol.p_z_alice", OPEN);
    check(open_unit(p.p_z_bob), "protocol.p_z_bob", OPEN);
    check(finite(p.pulse_rate) && p.pulse_rate > 0.0, "protocol.pulse_rate", "must be positive");

    let c = &cfg.channel;
    check(finite(c.length_km) && c.length_km >= 0.0, "channel.length_km", "must be >= 0");
    check(
        finite(c.atten_db_per_km) && c.atten_db_per_km >= 0.0,
        "channel.atten_db_per_km",
        "must be >= 0",
    );
    check(finite(c.extra_loss_db) && c.extra_loss_db >= 0.0, "channel.extra_loss_db", "must be >= 0");

    let d = &cfg.detector;
    check(
        finite(d.efficiency) && (0.0..=1.0).contains(&d.efficiency),
        "detector.efficiency",
        "must lie in [0,1]",
    );
    check(finite(d.dark_rate_hz) && d.dark_rate_hz >= 0.0, "detector.dark_rate_hz", "must be >= 0");
    check(finite(d.gate_window_s) && d.gate_window_s >= 0.0, "detector.gate_window_s", "must be >= 0");
    check(
        d.dark_rate_hz * d.gate_window_s <= 1.0,
        "detector.dark_rate_hz",
        "dark count probability per slot must not exceed 1",
    );
    check(
        finite(d.intrinsic_error) && (0.0..=0.5).contains(&d.intrinsic_error),
        "detector.intrinsic_error",
        "must lie in [0,1/2]",
    );
    check(
        finite(d.phase_misalignment) && (0.0..=0.5).contains(&d.phase_misalignment),
        "detector.phase_misalignment",
        "must lie in [0,1/2]",
    );
    check(finite(d.jitter_sigma_s) && d.jitter_sigma_s >= 0.0, "detector.jitter_sigma_s", "must be >= 0");
    check(
        finite(d.bin_halfwidth_s) && d.bin_halfwidth_s >= 0.0,
        "detector.bin_halfwidth_s",
        "must be >= 0",
    );

    let s = &cfg.security;
    check(open_unit(s.eps_sec), "security.eps_sec", "must lie strictly inside (0,1)");
    check(open_unit(s.eps_cor), "security.eps_cor", "must lie strictly inside (0,1)");
    check(
        finite(s.ec_efficiency) && s.ec_efficiency >= 1.0,
        "security.ec_efficiency",
        "must be >= 1",
    );

    let (min, label) = match cfg.block.mode {
        BlockMode::Analysis => (BlockConfig::MIN_ANALYSIS, "must be >= 10000 in analysis mode"),
        BlockMode::Simulation => (BlockConfig::MIN_SIMULATION, "must be >= 64 in simulation mode"),
    };
    check(cfg.block.n_z_target >= min, "block.n_z_target", label);

    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(v))
    }
}

impl ExperimentConfig {
    /// Canonical serialization: every key, in [`KEYS`] order, with
    /// round-trip exact number formatting.
    pub fn to_config_string(&self) -> String {
        let p = &self.protocol;
        let c = &self.channel;
        let d = &self.detector;
        let s = &self.security;
        let entries: [(&str, String); 21] = [
            ("protocol.mu1", num(p.mu1)),
            ("protocol.mu2", num(p.mu2)),
            ("protocol.p_mu1", num(p.p_mu1)),
            ("protocol.p_z_alice", num(p.p_z_alice)),
            ("protocol.p_z_bob", num(p.p_z_bob)),
            ("protocol.pulse_rate", num(p.pulse_rate)),
            ("channel.length_km", num(c.length_km)),
            ("channel.atten_db_per_km", num(c.atten_db_per_km)),
            ("channel.extra_loss_db", num(c.extra_loss_db)),
            ("detector.efficiency", num(d.efficiency)),
            ("detector.dark_rate_hz", num(d.dark_rate_hz)),
            ("detector.gate_window_s", num(d.gate_window_s)),
            ("detector.intrinsic_error", num(d.intrinsic_error)),
            ("detector.phase_misalignment", num(d.phase_misalignment)),
            ("detector.jitter_sigma_s", num(d.jitter_sigma_s)),
            ("detector.bin_halfwidth_s", num(d.bin_halfwidth_s)),
            ("security.eps_sec", num(s.eps_sec)),
            ("security.eps_cor", num(s.eps_cor)),
            ("security.ec_efficiency", num(s.ec_efficiency)),
            ("block.n_z_target", self.block.n_z_target.to_string()),
            ("block.mode", self.block.mode.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical serialization.
    pub fn digest(&self) -> [u8; 32] {
        let h = Sha256::digest(self.to_config_string().as_bytes());
        let mut out = [0u8; 32];
        out.copy_from_slice(&h);
        out
    }

    pub fn digest_hex(&self) -> String {
        self.digest().iter().map(|b| format!("{b:02x}")).collect()
    }
}

// `{:e}` is shortest-round-trip for f64, so parse(num(x)) == x exactly.
fn num(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else if x.abs() >= 1e-3 && x.abs() < 1e7 {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const ROW1: &str = "\
# 251.7 km
protocol.mu1 = 0.49
protocol.mu2 = 0.18
protocol.pulse_rate = 2.5e9
channel.length_km = 251.7
channel.atten_db_per_km = 0.17
detector.efficiency = 0.5
detector.dark_rate_hz = 0.1
security.eps_sec = 1e-9
security.eps_cor = 1e-9
block.n_z_target = 8.2e6
";

    #[test]
    fn parses_full_document() {
        let cfg = parse_config(ROW1).unwrap();
        assert_eq!(cfg.protocol.mu1, 0.49);
        assert_eq!(cfg.protocol.mu2, 0.18);
        assert_eq!(cfg.protocol.pulse_rate, 2.5e9);
        assert_eq!(cfg.block.n_z_target, 8_200_000);
        assert_eq!(cfg.protocol.p_z_alice, 0.9);
        assert_eq!(cfg.detector.gate_window_s, 100e-12);
    }

    #[test]
    fn equal_intensities_rejected() {
        let text = ROW1.replace("mu1 = 0.49", "mu1 = 0.18");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("mu1 must exceed mu2"), "{err}");
    }

    #[test]
    fn missing_key_is_named() {
        let text = ROW1.replace("security.eps_sec = 1e-9\n", "");
        assert_eq!(
            parse_config(&text).unwrap_err(),
            ConfigError::MissingKey("security.eps_sec")
        );
    }

    #[test]
    fn unknown_and_duplicate_keys() {
        let err = parse_config(&format!("{ROW1}protocol.mu3 = 0.1\n")).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 12, .. }), "{err:?}");
        let err = parse_config(&format!("{ROW1}protocol.mu1 = 0.4\n")).unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateKey { .. }));
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = parse_config("protocol.mu1 = 0.5\nnot a pair\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::Syntax {
                line: 2,
                message: "expected `key = value`".into()
            }
        );
    }

    #[test]
    fn validate_is_identity_on_valid() {
        let cfg = parse_config(ROW1).unwrap();
        assert_eq!(validate(cfg).unwrap(), cfg);
    }

    #[test]
    fn validate_collects_every_violation() {
        let mut cfg = parse_config(ROW1).unwrap();
        cfg.protocol.p_z_alice = 1.0;
        cfg.security.eps_sec = 0.0;
        let ConfigError::Invalid(v) = validate(cfg).unwrap_err() else {
            panic!("expected violations");
        };
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].field, "protocol.p_z_alice");
        assert_eq!(v[0].message, "probability must lie strictly inside (0,1)");
        assert_eq!(v[1].field, "security.eps_sec");
    }

    #[test]
    fn block_minimum_depends_on_mode() {
        let text = ROW1.replace("8.2e6", "500");
        assert!(parse_config(&text).is_err());
        let cfg = parse_config(&format!("{text}block.mode = simulation\n")).unwrap();
        assert_eq!(cfg.block.n_z_target, 500);
    }

    #[test]
    fn canonical_round_trip() {
        let cfg = parse_config(ROW1).unwrap();
        let text = cfg.to_config_string();
        let again = parse_config(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(text, again.to_config_string());
    }

    fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
        (
            (0.02f64..1.0, 0.01f64..0.99, 0.01f64..0.99, 0.01f64..0.99, 0.01f64..0.99, 1.0f64..1e11),
            (0.0f64..1000.0, 0.0f64..1.0, 0.0f64..10.0),
            (0.0f64..=1.0, 0.0f64..1e3, 0.0f64..1e-9, 0.0f64..0.5, 0.0f64..0.5, 0.0f64..1e-10),
            (1e-15f64..0.5, 1e-15f64..0.5, 1.0f64..2.0, 10_000u64..1_000_000_000_000),
        )
            .prop_map(|((mu1, f2, p1, pza, pzb, rate), (l, a, x), (e, dc, gw, ie, pm, js), (es, ec, f, n))| {
                ExperimentConfig {
                    protocol: ProtocolParams {
                        mu1,
                        mu2: mu1 * f2,
                        p_mu1: p1,
                        p_z_alice: pza,
                        p_z_bob: pzb,
                        pulse_rate: rate,
                    },
                    channel: ChannelParams {
                        length_km: l,
                        atten_db_per_km: a,
                        extra_loss_db: x,
                    },
                    detector: DetectorParams {
                        efficiency: e,
                        dark_rate_hz: dc,
                        gate_window_s: gw,
                        intrinsic_error: ie,
                        phase_misalignment: pm,
                        jitter_sigma_s: js,
                        bin_halfwidth_s: 150e-12,
                    },
                    security: SecurityParams {
                        eps_sec: es,
                        eps_cor: ec,
                        ec_efficiency: f,
                    },
                    block: BlockConfig {
                        n_z_target: n,
                        mode: BlockMode::Analysis,
                    },
                }
            })
    }

    proptest! {
        #[test]
        fn serialize_parse_fixed_point(cfg in arb_config()) {
            let text = cfg.to_config_string();
            let back = parse_config(&text).unwrap();
            prop_assert_eq!(back, cfg);
            prop_assert_eq!(back.to_config_string(), text);
        }

        #[test]
        fn parse_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
            let text = String::from_utf8_lossy(&bytes);
            if let Ok(cfg) = parse_config(&text) {
                prop_assert_eq!(validate(cfg), Ok(cfg));
            }
        }

        #[test]
        fn parse_never_panics_on_keyed_noise(
            key in proptest::sample::select(KEYS.iter().map(|k| k.0).collect::<Vec<_>>()),
            value in "[-+0-9.eE a-z]{0,12}",
        ) {
            let text = format!("{ROW1}{key} = {value}\n");
            let _ = parse_config(&text);
        }
    }
}
