//! Shipped configurations. [`ROWS`] holds the long-distance operating
//! points with their measured figures; the others are a back-to-back setup
//! for protocol runs and a noiseless link for extrapolation.

use crate::model::{parse_config, ExperimentConfig};

/// One measured operating point. Everything except `config_text` is the
/// measured figure, kept for comparison.
#[derive(Debug, Clone, Copy)]
pub struct TableRow {
    pub name: &'static str,
    pub config_text: &'static str,
    pub length_km: f64,
    pub atten_db: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub block_size: f64,
    pub block_time_h: f64,
    pub qber_z_pct: f64,
    pub phi_z_pct: f64,
    pub rkr_bps: f64,
    pub skr_bps: f64,
    /// Rate over transmission time only, when interruptions were excluded.
    pub skr_active_bps: Option<f64>,
    /// Accepted computed/measured ratio is `[1/f, f]`.
    pub tolerance_factor: f64,
}

impl TableRow {
    pub fn config(&self) -> ExperimentConfig {
        parse_config(self.config_text).expect("shipped config parses")
    }

    /// Measured rates the computed one is compared against.
    pub fn references(&self) -> Vec<f64> {
        std::iter::once(self.skr_bps).chain(self.skr_active_bps).collect()
    }

    /// Ratio to the headline measured rate (transmission time only where
    /// given).
    pub fn ratio(&self, skr: f64) -> f64 {
        skr / self.skr_active_bps.unwrap_or(self.skr_bps)
    }

    /// True when `skr` is within the tolerance factor of every reference.
    pub fn agrees(&self, skr: f64) -> bool {
        let f = self.tolerance_factor;
        self.references().iter().all(|&r| skr >= r / f && skr <= r * f)
    }
}

pub const ROWS: [TableRow; 5] = [
    TableRow {
        name: "row-251.7km",
        config_text: include_str!("../configs/row-251.7km.conf"),
        length_km: 251.7,
        atten_db: 42.7,
        mu1: 0.49,
        mu2: 0.18,
        block_size: 8.2e6,
        block_time_h: 0.20,
        qber_z_pct: 0.5,
        phi_z_pct: 2.2,
        rkr_bps: 12e3,
        skr_bps: 4.9e3,
        skr_active_bps: None,
        tolerance_factor: 3.0,
    },
    TableRow {
        name: "row-302.1km",
        config_text: include_str!("../configs/row-302.1km.conf"),
        length_km: 302.1,
        atten_db: 51.3,
        mu1: 0.48,
        mu2: 0.18,
        block_size: 8.2e6,
        block_time_h: 1.17,
        qber_z_pct: 0.4,
        phi_z_pct: 3.7,
        rkr_bps: 1.9e3,
        skr_bps: 0.79e3,
        skr_active_bps: None,
        tolerance_factor: 3.0,
    },
    TableRow {
        name: "row-354.5km",
        config_text: include_str!("../configs/row-354.5km.conf"),
        length_km: 354.5,
        atten_db: 60.6,
        mu1: 0.35,
        mu2: 0.15,
        block_size: 6.2e6,
        block_time_h: 14.8,
        qber_z_pct: 0.7,
        phi_z_pct: 1.8,
        rkr_bps: 117.0,
        skr_bps: 62.0,
        skr_active_bps: None,
        tolerance_factor: 3.0,
    },
    TableRow {
        name: "row-404.9km",
        config_text: include_str!("../configs/row-404.9km.conf"),
        length_km: 404.9,
        atten_db: 69.3,
        mu1: 0.35,
        mu2: 0.15,
        block_size: 4.1e5,
        block_time_h: 6.67,
        qber_z_pct: 1.0,
        phi_z_pct: 4.3,
        rkr_bps: 17.0,
        skr_bps: 6.5,
        skr_active_bps: None,
        tolerance_factor: 3.0,
    },
    TableRow {
        name: "row-421.1km",
        config_text: include_str!("../configs/row-421.1km.conf"),
        length_km: 421.1,
        atten_db: 71.9,
        mu1: 0.30,
        mu2: 0.13,
        block_size: 2.0e5,
        block_time_h: 24.2,
        qber_z_pct: 2.1,
        phi_z_pct: 12.8,
        rkr_bps: 2.3,
        skr_bps: 0.25,
        skr_active_bps: Some(0.49),
        tolerance_factor: 5.0,
    },
];

pub const SESSION_TOY_TEXT: &str = include_str!("../configs/session-toy.conf");

pub fn session_toy() -> ExperimentConfig {
    parse_config(SESSION_TOY_TEXT).expect("shipped config parses")
}

pub const IDEALIZED_600KM_TEXT: &str = include_str!("../configs/idealized-600km.conf");

/// Text of any shipped configuration by name.
pub fn named(name: &str) -> Option<&'static str> {
    match name {
        "session-toy" => Some(SESSION_TOY_TEXT),
        "idealized-600km" => Some(IDEALIZED_600KM_TEXT),
        _ => row(name).map(|r| r.config_text),
    }
}

pub fn names() -> Vec<&'static str> {
    let mut v: Vec<&'static str> = ROWS.iter().map(|r| r.name).collect();
    v.extend(["session-toy", "idealized-600km"]);
    v
}

pub fn row(name: &str) -> Option<&'static TableRow> {
    ROWS.iter().find(|r| r.name == name)
}
