//! FIR pre-distortion design: convolution matrices, causal deconvolution,
//! manual tap adjustments and windowed application.
//!
//! Kernels here are discrete taps, `y[n] = sum_k h[k] x[n-k]`, so a kernel's
//! DC gain is the plain sum of its taps.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::waveform::{convolve, DistortionChannel, Waveform};

/// Dense `(M+N) x M` Toeplitz realization of a kernel with `N+1` taps
/// acting on inputs of length `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionMatrix {
    pub matrix: DMatrix<f64>,
    pub input_len: usize,
    pub kernel_len: usize,
}

impl ConvolutionMatrix {
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_len {
            return invalid(format!("input length {} does not match matrix width {}", x.len(), self.input_len));
        }
        Ok((&self.matrix * DVector::from_column_slice(x)).iter().copied().collect())
    }
}

pub fn build_conv_matrix(h: &Waveform, input_len: usize) -> Result<ConvolutionMatrix> {
    let taps = h.samples();
    if input_len < taps.len() {
        return invalid(format!("input length {input_len} is shorter than the kernel ({} taps)", taps.len()));
    }
    let n = taps.len() - 1;
    let matrix = DMatrix::from_fn(input_len + n, input_len, |i, j| if i >= j && i - j <= n { taps[i - j] } else { 0.0 });
    Ok(ConvolutionMatrix { matrix, input_len, kernel_len: taps.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FIRCoefficients {
    pub sample_period: f64,
    pub b: Vec<f64>,
    /// `(index, delta)` pairs in the order they were applied.
    #[serde(default)]
    pub adjustments: Vec<(usize, f64)>,
}

impl FIRCoefficients {
    pub fn new(b: Vec<f64>, sample_period: f64) -> Result<Self> {
        let c = Self { sample_period, b, adjustments: Vec::new() };
        c.validate()?;
        Ok(c)
    }

    /// Single unit tap.
    pub fn delta(sample_period: f64) -> Result<Self> {
        Self::new(vec![1.0], sample_period)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_period > 0.0 && self.sample_period.is_finite()) {
            return invalid(format!("sample period must be positive, got {}", self.sample_period));
        }
        if self.b.is_empty() {
            return invalid("FIR filter needs at least one tap");
        }
        if let Some(i) = self.b.iter().position(|v| !v.is_finite()) {
            return invalid(format!("tap {i} is not finite"));
        }
        if self.b[0] == 0.0 {
            return invalid("leading tap must be nonzero");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn dc_sum(&self) -> f64 {
        self.b.iter().sum()
    }

    pub fn to_waveform(&self) -> Waveform {
        Waveform::new(self.b.clone(), self.sample_period, 0.0).expect("validated taps")
    }

    /// The filter as an explicit-impulse channel stage.
    pub fn as_channel(&self) -> DistortionChannel {
        DistortionChannel::ExplicitImpulse { taps: self.to_waveform() }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum InversionMethod {
    /// Forward substitution on the square leading block.
    #[default]
    Exact,
    /// Normal equations on the tall matrix with Tikhonov weight `lambda`.
    LeastSquares { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InversionOptions {
    pub method: InversionMethod,
    /// Drop trailing taps below `noise_floor * max|h|` before inverting.
    pub noise_floor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirDesign {
    pub coefficients: FIRCoefficients,
    /// `h_inv * h - delta`, full convolution length.
    pub residual: Vec<f64>,
    /// Number of kernel taps actually used after noise-floor clamping.
    pub kernel_taps_used: usize,
}

impl FirDesign {
    /// Largest residual over the first `b.len()` samples.
    pub fn max_leading_residual(&self) -> f64 {
        self.residual.iter().take(self.coefficients.len()).fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Largest residual beyond the truncation horizon.
    pub fn max_tail_residual(&self) -> f64 {
        self.residual.iter().skip(self.coefficients.len()).fold(0.0, |m, r| m.max(r.abs()))
    }
}

pub fn invert_to_fir(h: &Waveform, fir_len: usize) -> Result<FirDesign> {
    invert_to_fir_with(h, fir_len, InversionOptions::default())
}

pub fn invert_to_fir_with(h: &Waveform, fir_len: usize, opts: InversionOptions) -> Result<FirDesign> {
    if fir_len == 0 {
        return invalid("fir_len must be at least 1");
    }
    let mut taps = h.samples().to_vec();
    let hmax = taps.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if hmax == 0.0 {
        return Err(Error::NonInvertibleLeadingTap { h0: 0.0, tol: 0.0 });
    }
    let tol = 1e-9 * hmax;
    if taps[0].abs() < tol {
        return Err(Error::NonInvertibleLeadingTap { h0: taps[0], tol });
    }
    if let Some(floor) = opts.noise_floor {
        let cut = floor * hmax;
        let keep = taps.iter().rposition(|v| v.abs() >= cut).map_or(1, |i| i + 1);
        taps.truncate(keep);
    }

    let b = match opts.method {
        InversionMethod::Exact => {
            let mut g = vec![0.0; fir_len];
            g[0] = 1.0 / taps[0];
            for n in 1..fir_len {
                let mut acc = 0.0;
                for k in 1..=n.min(taps.len() - 1) {
                    acc += taps[k] * g[n - k];
                }
                g[n] = -acc / taps[0];
            }
            g
        }
        InversionMethod::LeastSquares { lambda } => {
            if !(lambda >= 0.0) {
                return invalid(format!("Tikhonov weight must be non-negative, got {lambda}"));
            }
            let kern = Waveform::new(taps.clone(), h.sample_period(), 0.0)?;
            let m = build_conv_matrix(&kern, fir_len.max(taps.len()))?;
            let hm = m.matrix.columns(0, fir_len).into_owned();
            let mut a = hm.transpose() * &hm;
            for i in 0..fir_len {
                a[(i, i)] += lambda;
            }
            let mut rhs = DVector::zeros(fir_len);
            rhs[0] = taps[0];
            let sol = a.clone().cholesky().map(|c| c.solve(&rhs)).or_else(|| a.lu().solve(&rhs));
            match sol {
                Some(s) => s.iter().copied().collect(),
                None => return Err(Error::NonInvertibleLeadingTap { h0: taps[0], tol }),
            }
        }
    };

    let mut residual = convolve(&b, &taps);
    residual[0] -= 1.0;
    let coefficients = FIRCoefficients::new(b, h.sample_period())?;
    Ok(FirDesign { coefficients, residual, kernel_taps_used: taps.len() })
}

/// Adds `delta` to tap `index` for each pair, in order, and records them.
pub fn adjust_overshoot(c: &FIRCoefficients, adjustments: &[(usize, f64)]) -> Result<FIRCoefficients> {
    let mut out = c.clone();
    for &(index, delta) in adjustments {
        if index >= out.b.len() {
            return invalid(format!("adjustment index {index} is out of range for {} taps", out.b.len()));
        }
        if !delta.is_finite() {
            return invalid(format!("adjustment delta at index {index} is not finite"));
        }
        out.b[index] += delta;
        out.adjustments.push((index, delta));
    }
    out.validate()?;
    Ok(out)
}

/// Filters `x` with `c` during the first `window` ns of the waveform and
/// passes it through unchanged afterwards. The first sample at or past the
/// window is the average of both.
pub fn apply_predistortion(x: &Waveform, c: &FIRCoefficients, window: f64) -> Result<Waveform> {
    c.validate()?;
    if (x.sample_period() - c.sample_period).abs() > 1e-9 * c.sample_period {
        return invalid(format!("FIR sample period {} ns does not match waveform period {} ns", c.sample_period, x.sample_period()));
    }
    let min_window = c.len() as f64 * c.sample_period;
    if !(window == f64::INFINITY || window >= min_window - 1e-9 * c.sample_period) {
        return invalid(format!("window {window} ns is shorter than the filter ({min_window} ns)"));
    }
    let xs = x.samples();
    let filtered = convolve(xs, &c.b);
    let ts = x.sample_period();
    let mut spliced = false;
    let out = xs
        .iter()
        .enumerate()
        .map(|(n, &raw)| {
            let t = n as f64 * ts;
            if t < window - 1e-9 * ts {
                filtered[n]
            } else if !spliced {
                spliced = true;
                0.5 * (filtered[n] + raw)
            } else {
                raw
            }
        })
        .collect();
    Waveform::new(out, ts, x.t0())
}
