use std::f64::consts::TAU;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fit::{curve_fit, linear_regression, LmOptions, Model};
use crate::waveform::Waveform;

/// `A cos(Omega (t - t0)) + B`, parameters `[A, Omega, t0, B]`.
struct Cosine;

impl Model for Cosine {
    fn n_params(&self) -> usize {
        4
    }
    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        p[0] * (p[1] * (t - p[2])).cos() + p[3]
    }
    fn grad(&self, t: f64, p: &[f64], g: &mut [f64]) {
        let ph = p[1] * (t - p[2]);
        let (s, c) = ph.sin_cos();
        g[0] = c;
        g[1] = -p[0] * s * (t - p[2]);
        g[2] = p[0] * s * p[1];
        g[3] = 1.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowStatus {
    Ok,
    /// The window carries no measurable oscillation.
    NoOscillation,
    /// No restart produced a converged fit with finite errors.
    NotConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFit {
    pub t_start: f64,
    pub t_center: f64,
    /// Angular frequency in rad/ns.
    pub omega: Option<f64>,
    pub omega_stderr: Option<f64>,
    pub amplitude: Option<f64>,
    pub status: WindowStatus,
}

impl WindowFit {
    /// Fitted frequency in MHz.
    pub fn freq_mhz(&self) -> Option<f64> {
        self.omega.map(|w| w / TAU * 1e3)
    }

    pub fn freq_stderr_mhz(&self) -> Option<f64> {
        self.omega_stderr.map(|w| w / TAU * 1e3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlidingFitOptions {
    /// Window length in ns.
    pub window: f64,
    /// Shift between window starts in ns.
    pub step: f64,
    /// Restarts from the next-best frequency seeds when a fit fails.
    pub max_restarts: usize,
}

impl Default for SlidingFitOptions {
    fn default() -> Self {
        Self { window: 10.0, step: 1.0, max_restarts: 4 }
    }
}

pub fn sliding_window_fit(trace: &Waveform, window: f64, step: f64) -> Result<Vec<WindowFit>> {
    sliding_window_fit_with(trace, &SlidingFitOptions { window, step, ..Default::default() })
}

/// Fits `A cos(Omega (t - t0)) + B` in windows `[n step, n step + window]`
/// measured from the trace start.
pub fn sliding_window_fit_with(trace: &Waveform, opts: &SlidingFitOptions) -> Result<Vec<WindowFit>> {
    if !(opts.window > 0.0 && opts.step > 0.0 && opts.window.is_finite() && opts.step.is_finite()) {
        return invalid(format!("window {} and step {} must be positive", opts.window, opts.step));
    }
    let ts = trace.sample_period();
    let duration = (trace.len().saturating_sub(1)) as f64 * ts;
    let slack = 1e-9 * ts;
    if duration + slack < opts.window + opts.step {
        return invalid(format!("trace of {duration} ns is shorter than window + step = {} ns", opts.window + opts.step));
    }
    let per_window = (opts.window / ts + 1e-9).floor() as usize + 1;
    if per_window < 6 {
        return invalid(format!("window holds {per_window} samples, need at least 6"));
    }
    let n_windows = ((duration - opts.window + slack) / opts.step).floor() as usize + 1;
    let t_first = trace.t0();
    let xs = trace.samples();
    Ok((0..n_windows)
        .into_par_iter()
        .map(|n| {
            let start = n as f64 * opts.step;
            let i0 = ((start - slack) / ts).ceil().max(0.0) as usize;
            let i1 = (((start + opts.window + slack) / ts).floor() as usize).min(xs.len() - 1);
            let local: Vec<f64> = (i0..=i1).map(|i| i as f64 * ts - start).collect();
            fit_window(&local, &xs[i0..=i1], t_first + start, opts)
        })
        .collect())
}

/// Dominant nonzero frequency of `ys` (rad per unit of `ts`) from a
/// zero-padded FFT with parabolic peak interpolation.
fn fft_peak(ys: &[f64], ts: f64) -> Option<f64> {
    let n = ys.len();
    let nfft = (16 * n).next_power_of_two().max(256);
    let mean = ys.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = ys.iter().map(|y| Complex::new(y - mean, 0.0)).collect();
    buf.resize(nfft, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let mag: Vec<f64> = buf[..nfft / 2 + 1].iter().map(|c| c.norm()).collect();
    let k = (1..mag.len()).max_by(|&a, &b| mag[a].total_cmp(&mag[b]))?;
    let mut kf = k as f64;
    if k + 1 < mag.len() {
        let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
        let den = a - 2.0 * b + c;
        if den != 0.0 {
            kf += 0.5 * (a - c) / den;
        }
    }
    (kf > 0.0).then(|| TAU * kf / (nfft as f64 * ts))
}

/// Linear least squares for `a cos(w t) + b sin(w t) + c` at fixed `w`;
/// returns `(ssr, [A, w, t0, B])`.
fn project(ts: &[f64], ys: &[f64], w: f64) -> Option<(f64, [f64; 4])> {
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut aty = nalgebra::Vector3::<f64>::zeros();
    for (&t, &y) in ts.iter().zip(ys) {
        let row = nalgebra::Vector3::new((w * t).cos(), (w * t).sin(), 1.0);
        ata += row * row.transpose();
        aty += row * y;
    }
    let sol = ata.try_inverse()? * aty;
    let ssr = ts
        .iter()
        .zip(ys)
        .map(|(&t, &y)| (y - sol[0] * (w * t).cos() - sol[1] * (w * t).sin() - sol[2]).powi(2))
        .sum();
    let amp = sol[0].hypot(sol[1]);
    let t0 = sol[1].atan2(sol[0]) / w;
    Some((ssr, [amp, w, t0, sol[2]]))
}

fn fit_window(local: &[f64], ys: &[f64], t_start: f64, opts: &SlidingFitOptions) -> WindowFit {
    let span = local[local.len() - 1];
    let ts = local[1] - local[0];
    let flagged = |status| WindowFit {
        t_start,
        t_center: t_start + span / 2.0,
        omega: None,
        omega_stderr: None,
        amplitude: None,
        status,
    };
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let spread = ys.iter().map(|y| (y - mean).abs()).fold(0.0, f64::max);
    if !(spread > 1e-12 * mean.abs().max(1.0)) {
        return flagged(WindowStatus::NoOscillation);
    }
    let Some(w_fft) = fft_peak(ys, ts) else {
        return flagged(WindowStatus::NoOscillation);
    };
    // variable-projection scan around the FFT seed; the best few local
    // minima become LM starting points
    let w_max = std::f64::consts::PI / ts;
    let scan: Vec<(f64, [f64; 4])> = (0..=60)
        .map(|k| w_fft * (0.4 + 0.02 * k as f64))
        .filter(|&w| w > 0.0 && w < w_max)
        .filter_map(|w| project(local, ys, w))
        .collect();
    let mut seeds: Vec<(f64, [f64; 4])> = (0..scan.len())
        .filter(|&i| (i == 0 || scan[i].0 <= scan[i - 1].0) && (i + 1 == scan.len() || scan[i].0 <= scan[i + 1].0))
        .map(|i| scan[i])
        .collect();
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0));
    seeds.truncate(opts.max_restarts + 1);
    if seeds.is_empty() {
        return flagged(WindowStatus::NotConverged);
    }

    let mut best: Option<crate::fit::FitResult> = None;
    for (_, p0) in &seeds {
        let Ok(fit) = curve_fit(&Cosine, local, ys, p0, LmOptions::default()) else {
            continue;
        };
        let usable = fit.converged && fit.stderr.is_some() && fit.params.iter().all(|v| v.is_finite());
        if usable && best.as_ref().is_none_or(|b| fit.ssr < b.ssr) {
            best = Some(fit);
        }
    }
    let Some(fit) = best else {
        return flagged(WindowStatus::NotConverged);
    };
    if fit.params[0].abs() <= 1e-9 * spread {
        return flagged(WindowStatus::NoOscillation);
    }
    WindowFit {
        t_start,
        t_center: t_start + span / 2.0,
        omega: Some(fit.params[1].abs()),
        omega_stderr: fit.stderr_of(1),
        amplitude: Some(fit.params[0].abs()),
        status: WindowStatus::Ok,
    }
}

/// Regression of fitted frequency (MHz) against window centre (ns) over the
/// successful windows; returns `(slope MHz/ns, slope stderr)`.
pub fn window_slope(fits: &[WindowFit]) -> Option<(f64, f64)> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = fits.iter().filter_map(|f| f.freq_mhz().map(|v| (f.t_center, v))).unzip();
    linear_regression(&xs, &ys).map(|(slope, _, se)| (slope, se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn tone(f_mhz: f64, len: usize, ts: f64) -> Waveform {
        Waveform::from_fn(len, ts, 0.0, |t| 0.3 * (TAU * f_mhz * 1e-3 * t + 0.4).cos() + 0.5).unwrap()
    }

    #[test]
    fn recovers_pure_tone_in_every_window() {
        let fits = sliding_window_fit(&tone(100.0, 501, 0.1), 10.0, 1.0).unwrap();
        assert_eq!(fits.len(), 41);
        for f in &fits {
            assert_eq!(f.status, WindowStatus::Ok);
            assert!((f.freq_mhz().unwrap() - 100.0).abs() < 1e-6, "{:?}", f);
            assert!(f.freq_stderr_mhz().unwrap() < 1e-6);
        }
        assert_eq!(fits[3].t_start, 3.0);
        assert_eq!(fits[3].t_center, 8.0);
    }

    #[test]
    fn constant_trace_is_flagged_everywhere() {
        let w = Waveform::new(vec![0.5; 300], 0.1, 0.0).unwrap();
        let fits = sliding_window_fit(&w, 10.0, 1.0).unwrap();
        assert!(!fits.is_empty());
        assert!(fits.iter().all(|f| f.status == WindowStatus::NoOscillation && f.omega.is_none()));
        assert!(window_slope(&fits).is_none());
    }

    #[test]
    fn rejects_short_windows_and_traces() {
        let w = tone(100.0, 100, 1.0);
        assert!(sliding_window_fit(&w, 4.0, 1.0).is_err());
        assert!(sliding_window_fit(&w, 99.0, 1.0).is_err());
        assert!(sliding_window_fit(&w, 10.0, 0.0).is_err());
    }

    #[test]
    fn linear_chirp_slope_is_recovered() {
        // instantaneous frequency 60 + 0.8 t MHz
        let w = Waveform::from_fn(1201, 0.1, 0.0, |t| (TAU * (0.060 * t + 0.0004 * t * t)).cos()).unwrap();
        let fits = sliding_window_fit(&w, 15.0, 1.0).unwrap();
        let (slope, _) = window_slope(&fits).unwrap();
        assert!((slope - 0.8).abs() < 0.01, "slope {slope}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn stationary_tone_scatter_matches_stderr(f in 60.0f64..150.0, sigma in 0.01f64..0.05, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, sigma).unwrap();
            let clean = tone(f, 1601, 0.1);
            let noisy: Vec<f64> = clean.samples().iter().map(|v| v + noise.sample(&mut rng)).collect();
            let w = Waveform::new(noisy, 0.1, 0.0).unwrap();
            // disjoint windows keep the estimates independent
            let fits = sliding_window_fit(&w, 10.0, 10.0).unwrap();
            let om: Vec<f64> = fits.iter().filter_map(|x| x.omega).collect();
            let se: Vec<f64> = fits.iter().filter_map(|x| x.omega_stderr).collect();
            prop_assert_eq!(om.len(), fits.len());
            let n = om.len() as f64;
            let mean = om.iter().sum::<f64>() / n;
            let sd = (om.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let mean_se = se.iter().sum::<f64>() / n;
            prop_assert!(sd <= 2.0 * mean_se, "sd {} vs stderr {}", sd, mean_se);
        }
    }
}
