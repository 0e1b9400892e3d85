//! Software cryoscope for baseband pulse distortions in a double quantum dot.
//!
//! The crate simulates two-level charge dynamics under distorted detuning
//! pulses, runs virtual detuning-axis pulsed spectroscopy (DAPS) sweeps,
//! reconstructs the drive-line step response from the spectroscopy ridge,
//! designs inverse FIR pre-distortion filters, and analyzes frequency chirp in
//! oscillation traces.
//!
//! Conventions used throughout:
//! - time is in ns;
//! - detunings, couplings and rates are angular (rad/ns); use
//!   [`units::ghz_to_rad_per_ns`] to convert from cyclic GHz;
//! - the population signal `w = 2 p_e` lives in `[0, 1]`.

pub mod chirp;
pub mod daps;
pub mod dynamics;
pub mod error;
pub mod filterdesign;
pub mod fit;
pub mod io;
pub mod noise;
pub mod waveform;

pub use error::{Error, Result};

pub mod units {
    use std::f64::consts::TAU;

    /// Cyclic GHz to angular rad/ns.
    pub fn ghz_to_rad_per_ns(f_ghz: f64) -> f64 {
        TAU * f_ghz
    }

    pub fn rad_per_ns_to_ghz(omega: f64) -> f64 {
        omega / TAU
    }
}
