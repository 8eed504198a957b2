//! Deterministic baseband testbed for physical-layer replay attacks.
//!
//! The crate reproduces a record/replay attack against QPSK space-ground
//! links during launch and reentry entirely in software:
//!
//! - [`modem`]: payload generation, Gray-mapped QPSK and RRC pulse shaping
//! - [`channel`]: time-variant multi-tap Doppler channel, AWGN, superposition
//! - [`receiver`]: baseline and hardened synchronizing receivers
//! - [`scenario`]: geometry, two-stage attacker, Best Frame Selector, sweeps
//! - [`metrics`]: BER, SNR estimation, digital power level, boxplot statistics
//! - [`cli`]: run configuration, IQ file persistence and report emission
//!
//! Every stochastic element is driven by an explicit seed, so a run is a pure
//! function of its configuration.

pub mod channel;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod modem;
pub mod receiver;
pub mod scenario;

mod interp;

pub use error::{Error, Result};
pub use modem::IqBuffer;

/// Speed of light used for every delay and Doppler computation, in m/s.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;
