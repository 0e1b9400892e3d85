//! Frequency-chirp analysis of oscillation traces.
//!
//! Frequencies in this module are in MHz and times in ns, so every phase
//! carries an explicit `1e-3` factor: `2 pi f[MHz] t[ns] 1e-3`.

mod radon;
mod sliding;
mod stft;

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::waveform::Waveform;

pub use radon::{radon, radon_image, radon_peak_angle, radon_with, AxisNormalization, RadonMap};
pub use sliding::{sliding_window_fit, sliding_window_fit_with, window_slope, SlidingFitOptions, WindowFit, WindowStatus};
pub use stft::{stft, stft_with, EdgeMode, Spectrogram, StftOptions, WindowFn};

/// Two-tone exchange-oscillation model
/// `[A1 sin(2 pi (B1 t + C^2 t^2)) + A2 sin(2 pi B2 t)] exp(-t^2/t0^2) + D`.
///
/// `B1`, `B2` and `C` are in MHz, `t0` in ns. The first tone has
/// instantaneous frequency `B1 + 2 C^2 t` (MHz, with `t` in us).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChirpSignalParams {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub c: f64,
    pub d: f64,
    pub t0: f64,
}

impl ChirpSignalParams {
    /// Chirped reference trace.
    pub fn reference_chirped() -> Self {
        Self { a1: 0.1044, a2: 0.0610, b1: 65.1, b2: 40.7, c: 22.599, d: 0.5, t0: 35.394 }
    }

    /// Same trace with the chirp switched off.
    pub fn reference_unchirped() -> Self {
        Self { c: 0.0, ..Self::reference_chirped() }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.a1, self.a2, self.b1, self.b2, self.c, self.d, self.t0];
        if all.iter().any(|v| !v.is_finite()) {
            return invalid("chirp signal parameters must be finite");
        }
        if !(self.t0 > 0.0) {
            return invalid(format!("envelope time t0 must be > 0, got {}", self.t0));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        let ct = self.c * 1e-3 * t;
        let phase1 = TAU * (self.b1 * 1e-3 * t + ct * ct);
        let phase2 = TAU * self.b2 * 1e-3 * t;
        let env = (-(t / self.t0).powi(2)).exp();
        (self.a1 * phase1.sin() + self.a2 * phase2.sin()) * env + self.d
    }

    /// Instantaneous frequency of the first tone in MHz at `t` ns.
    pub fn instantaneous_frequency(&self, t: f64) -> f64 {
        self.b1 + 2.0 * self.c * self.c * 1e-3 * t
    }

    /// Slope of the first tone's frequency in MHz per ns.
    pub fn chirp_rate(&self) -> f64 {
        2.0 * self.c * self.c * 1e-3
    }
}

/// Evaluates the model on `len` samples of period `sample_period` starting
/// at `t_start`.
pub fn synth_exchange_signal(p: &ChirpSignalParams, len: usize, sample_period: f64, t_start: f64) -> Result<Waveform> {
    p.validate()?;
    Waveform::from_fn(len, sample_period, t_start, |t| p.eval(t))
}

/// Sampling of the reference traces: 0.5 ns over 0..=100 ns.
pub const REFERENCE_SAMPLE_PERIOD: f64 = 0.5;
pub const REFERENCE_DURATION: f64 = 100.0;

/// `p` sampled on the reference grid.
pub fn reference_trace(p: &ChirpSignalParams) -> Result<Waveform> {
    let len = (REFERENCE_DURATION / REFERENCE_SAMPLE_PERIOD).round() as usize + 1;
    synth_exchange_signal(p, len, REFERENCE_SAMPLE_PERIOD, 0.0)
}

/// Outcome of running the STFT and Radon stages on one trace.
#[derive(Debug, Clone)]
pub struct ChirpAnalysis {
    pub spectrogram: Spectrogram,
    pub radon: RadonMap,
    pub peak_angle: f64,
}

/// Mean-subtracts `trace`, takes its spectrogram and returns the Radon peak
/// angle. Removing the mean keeps the static offset from dominating the
/// projection with a horizontal DC ridge.
pub fn analyze_chirp(trace: &Waveform, stft_opts: &StftOptions, angles: &[f64]) -> Result<ChirpAnalysis> {
    let mean = trace.sum() / trace.len().max(1) as f64;
    let centered = Waveform::new(trace.samples().iter().map(|v| v - mean).collect(), trace.sample_period(), trace.t0())?;
    let spectrogram = stft_with(&centered, stft_opts)?;
    let map = radon(&spectrogram, angles)?;
    let peak_angle = radon_peak_angle(&map)?;
    Ok(ChirpAnalysis { spectrogram, radon: map, peak_angle })
}

/// Uniform angle grid `[0, 180)` with the given step in degrees.
pub fn angle_grid(step_deg: f64) -> Result<Vec<f64>> {
    if !(step_deg > 0.0 && step_deg <= 90.0) {
        return invalid(format!("angle step must lie in (0, 90] degrees, got {step_deg}"));
    }
    let n = (180.0 / step_deg - 1e-9).ceil() as usize;
    Ok((0..n).map(|k| k as f64 * step_deg).collect())
}
