use std::f64::consts::TAU;
use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::io::write_matrix_csv;
use crate::waveform::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowFn {
    Hann,
    Rect,
    /// Gaussian with standard deviation of one sixth of the window length.
    Gauss,
}

impl WindowFn {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let c = (len as f64 - 1.0) / 2.0;
        (0..len)
            .map(|n| match self {
                // periodic form, so shifted copies at unit hop sum to a constant
                WindowFn::Hann => 0.5 - 0.5 * (TAU * n as f64 / len as f64).cos(),
                WindowFn::Rect => 1.0,
                WindowFn::Gauss => {
                    let z = (n as f64 - c) / (len as f64 / 6.0);
                    (-0.5 * z * z).exp()
                }
            })
            .collect()
    }
}

/// Placement of the analysis frames relative to the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMode {
    /// Frames lie entirely inside the trace.
    Valid,
    /// The trace is zero-padded by `window - 1` samples on both sides, so
    /// every sample is seen by the same number of frames at unit hop.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftOptions {
    /// Window length in ns.
    pub window_len: f64,
    /// Frame hop in ns.
    pub hop: f64,
    pub window_fn: WindowFn,
    /// FFT length as a multiple of the window length.
    pub zero_pad: usize,
    pub edges: EdgeMode,
}

impl Default for StftOptions {
    fn default() -> Self {
        Self { window_len: 25.0, hop: 1.0, window_fn: WindowFn::Hann, zero_pad: 4, edges: EdgeMode::Valid }
    }
}

/// One-sided STFT magnitude, `magnitude[freq][time]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    /// Frame centres in ns.
    pub times: Vec<f64>,
    /// Bin frequencies in MHz, from 0 to Nyquist.
    pub freqs: Vec<f64>,
    pub magnitude: Vec<Vec<f64>>,
    pub window_fn: WindowFn,
    pub window_samples: usize,
    pub hop_samples: usize,
    pub nfft: usize,
    pub sample_period: f64,
}

impl Spectrogram {
    pub fn n_freqs(&self) -> usize {
        self.freqs.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty() || self.times.is_empty()
    }

    /// Trace energy recovered from the frames:
    /// `hop / sum(w^2) * sum_frames sum_k |X_k|^2 / nfft` over the full
    /// two-sided spectrum.
    pub fn energy_estimate(&self) -> f64 {
        let w2: f64 = self.window_fn.coefficients(self.window_samples).iter().map(|w| w * w).sum();
        let nyquist = if self.nfft.is_multiple_of(2) { Some(self.nfft / 2) } else { None };
        let mut total = 0.0;
        for (k, row) in self.magnitude.iter().enumerate() {
            let weight = if k == 0 || Some(k) == nyquist { 1.0 } else { 2.0 };
            total += weight * row.iter().map(|m| m * m).sum::<f64>();
        }
        total * self.hop_samples as f64 / (w2 * self.nfft as f64)
    }

    /// Frequency of the strongest bin in each frame, in MHz.
    pub fn ridge(&self) -> Vec<f64> {
        (0..self.n_times())
            .map(|j| {
                let k = (0..self.n_freqs()).max_by(|&a, &b| self.magnitude[a][j].total_cmp(&self.magnitude[b][j])).unwrap_or(0);
                self.freqs[k]
            })
            .collect()
    }

    /// Matrix CSV with frequencies down the rows and frame times across.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv("freq_mhz", &self.freqs, &self.times, &self.magnitude, out)
    }

    pub fn write_meta_json<W: Write>(&self, out: W) -> Result<()> {
        let meta = serde_json::json!({
            "window_fn": self.window_fn,
            "window_samples": self.window_samples,
            "hop_samples": self.hop_samples,
            "nfft": self.nfft,
            "sample_period_ns": self.sample_period,
            "freq_unit": "MHz",
            "time_unit": "ns",
        });
        serde_json::to_writer_pretty(out, &meta)?;
        Ok(())
    }
}

pub fn stft(trace: &Waveform, window_len: f64, hop: f64, window_fn: WindowFn) -> Result<Spectrogram> {
    stft_with(trace, &StftOptions { window_len, hop, window_fn, ..Default::default() })
}

fn samples_for(duration: f64, ts: f64, what: &str) -> Result<usize> {
    if !(duration.is_finite() && duration > 0.0) {
        return invalid(format!("{what} must be > 0, got {duration}"));
    }
    Ok(((duration / ts).round() as usize).max(1))
}

pub fn stft_with(trace: &Waveform, opts: &StftOptions) -> Result<Spectrogram> {
    let ts = trace.sample_period();
    let n = trace.len();
    let l = samples_for(opts.window_len, ts, "window length")?;
    let hop = samples_for(opts.hop, ts, "hop")?;
    if l < 2 {
        return invalid("window must span at least two samples");
    }
    if l > n {
        return invalid(format!("window of {l} samples exceeds trace of {n} samples"));
    }
    if opts.zero_pad == 0 {
        return invalid("zero_pad factor must be >= 1");
    }
    let nfft = l * opts.zero_pad;
    let window = opts.window_fn.coefficients(l);
    let (first, last) = match opts.edges {
        EdgeMode::Valid => (0i64, (n - l) as i64),
        EdgeMode::Full => (1 - l as i64, n as i64 - 1),
    };
    let starts: Vec<i64> = (0..).map(|k| first + k * hop as i64).take_while(|&s| s <= last).collect();

    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let n_freqs = nfft / 2 + 1;
    let mut magnitude = vec![vec![0.0; starts.len()]; n_freqs];
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let x = trace.samples();
    for (j, &s) in starts.iter().enumerate() {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (m, w) in window.iter().enumerate() {
            let idx = s + m as i64;
            if idx >= 0 && (idx as usize) < n {
                buf[m].re = x[idx as usize] * w;
            }
        }
        fft.process(&mut buf);
        for k in 0..n_freqs {
            magnitude[k][j] = buf[k].norm();
        }
    }
    let times = starts.iter().map(|&s| trace.t0() + (s as f64 + (l as f64 - 1.0) / 2.0) * ts).collect();
    let freqs = (0..n_freqs).map(|k| k as f64 / (nfft as f64 * ts) * 1e3).collect();
    Ok(Spectrogram { times, freqs, magnitude, window_fn: opts.window_fn, window_samples: l, hop_samples: hop, nfft, sample_period: ts })
}
