//! Desk-scale simulation and analysis toolkit for LoRa CubeSat downlinks.
//!
//! The crate follows a packet from orbit to ground:
//!
//! - [`orbit`]: circular-LEO pass geometry, Doppler and free-space loss
//! - [`phy`]: chirp spread spectrum modem (modulate, dechirp-FFT demodulate)
//! - [`channel`]: AWGN, time-varying Doppler and a link budget
//! - [`detect`]: preamble detection with narrowband and equal-slope wideband
//!   correlators, fine Doppler estimation
//! - [`trajectory`]: pass-parameter recovery from sparse Doppler measurements
//! - [`errmodel`]: per-symbol error traces, bin-offset statistics, bit masks
//! - [`quant`]: k-bit signature quantization shared with the image codec
//! - [`netplan`]: ground tracks, station visibility, contacts and latency
//! - [`io`]: the on-disk formats exchanged with external tools

pub mod channel;
pub mod detect;
pub mod errmodel;
mod error;
pub mod io;
pub mod netplan;
pub mod orbit;
pub mod phy;
pub mod quant;
pub mod trajectory;

pub use error::{Error, Result};

/// Complex baseband sample type used throughout the crate.
pub type Cplx = num_complex::Complex64;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
