//! Simulation and optimization toolkit for pinching-antenna systems (PASS).
//!
//! A PASS radiates from dielectric pinching antennas (PAs) placed along a
//! waveguide. The crate covers the channel and hardware models, activation
//! constraints, two-user capacity regions, stochastic-geometry metrics,
//! pinching beamforming, wideband OFDM and CSI acquisition.

pub mod activation;
pub mod beamforming;
pub mod capacity;
pub mod channel;
pub mod csi;
pub mod error;
pub mod geometry;
pub mod hardware;
pub mod mc;
pub mod metrics;
pub mod numerics;
pub mod par;
pub mod wideband;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
