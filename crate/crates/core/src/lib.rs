//! Finite-key engine and post-processing stack for a one-decoy, three-state
//! time-bin QKD link.
//!
//! The crate is layered bottom-up:
//!
//! * [`model`] holds configuration types and the `key = value` config format.
//! * [`channel`] computes expected detection statistics in closed form.
//! * [`finitekey`] turns an observed [`Tally`] into a secret key length.
//! * [`simulate`] samples tallies (and hidden ground truth) by Monte Carlo.
//! * [`reconcile`] and [`amplify`] are the classical error-correction and
//!   privacy-amplification primitives.
//! * [`session`] runs the two-party protocol over a framed transport.
//! * [`optimize`] searches protocol parameters for the best expected rate.
//!
//! [`finitekey`] only ever sees a [`Tally`]; simulator ground truth
//! ([`simulate::TrueTally`]) has no path into it.

pub mod amplify;
pub mod bits;
pub mod bundles;
pub mod channel;
pub mod finitekey;
pub mod model;
pub mod optimize;
pub mod reconcile;
pub mod session;
pub mod simulate;

pub use bits::Bits;
pub use channel::{expected_key_rate, ExpectedTally, RateEstimate};
pub use finitekey::{Counts, KeyLengthBreakdown, Tally};
pub use model::{
    Basis, BlockConfig, BlockMode, ChannelParams, ConfigError, DetectorParams, ExperimentConfig,
    Intensity, ProtocolParams, SecurityParams,
};
pub use optimize::OptimizationResult;
pub use session::SessionReport;
