//! Uniformly sampled signals, control-pulse synthesis and linear drive-line
//! channels.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Relative tolerance used when comparing sample periods.
const PERIOD_RTOL: f64 = 1e-9;

/// A uniformly sampled real signal. Time is in ns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    t0: f64,
    sample_period: f64,
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_period: f64, t0: f64) -> Result<Self> {
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return invalid(format!("sample period must be positive, got {sample_period}"));
        }
        if !t0.is_finite() {
            return invalid("t0 must be finite");
        }
        if samples.is_empty() {
            return invalid("waveform must have at least one sample");
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return invalid(format!("sample {i} is not finite"));
        }
        Ok(Self { t0, sample_period, samples })
    }

    /// Single nonzero sample of value 1 at `t0`.
    pub fn delta(len: usize, sample_period: f64) -> Result<Self> {
        let mut samples = vec![0.0; len.max(1)];
        samples[0] = 1.0;
        Self::new(samples, sample_period, 0.0)
    }

    pub fn unit_step(len: usize, sample_period: f64) -> Result<Self> {
        Self::new(vec![1.0; len.max(1)], sample_period, 0.0)
    }

    /// Samples `f` at `t0 + n * sample_period` for `n` in `0..len`.
    pub fn from_fn(len: usize, sample_period: f64, t0: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let samples = (0..len).map(|n| f(t0 + n as f64 * sample_period)).collect();
        Self::new(samples, sample_period, t0)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.sample_period
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |n| self.time(n))
    }

    /// Time of the last sample.
    pub fn end_time(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn same_period(&self, other: &Waveform) -> bool {
        periods_match(self.sample_period, other.sample_period)
    }

    pub fn scaled(&self, factor: f64) -> Result<Waveform> {
        Waveform::new(self.samples.iter().map(|s| s * factor).collect(), self.sample_period, self.t0)
    }

    pub fn with_t0(mut self, t0: f64) -> Self {
        self.t0 = t0;
        self
    }

    /// Keeps the first `len` samples (or pads with zeros up to `len`).
    pub fn resized(&self, len: usize) -> Result<Waveform> {
        let mut samples = self.samples.clone();
        samples.resize(len.max(1), 0.0);
        Waveform::new(samples, self.sample_period, self.t0)
    }

    /// Linear interpolation at time `t`; zero outside the sampled span.
    pub fn value_at(&self, t: f64) -> f64 {
        let x = (t - self.t0) / self.sample_period;
        if x < 0.0 || x > (self.len() - 1) as f64 {
            return 0.0;
        }
        let i = x.floor() as usize;
        if i + 1 >= self.len() {
            return self.samples[self.len() - 1];
        }
        let frac = x - i as f64;
        self.samples[i] + frac * (self.samples[i + 1] - self.samples[i])
    }

    /// Linear-interpolation resampling onto a new period over the same span.
    pub fn resample_linear(&self, sample_period: f64) -> Result<Waveform> {
        if !(sample_period > 0.0) {
            return invalid("resampling period must be positive");
        }
        let span = self.end_time() - self.t0;
        let len = (span / sample_period + 1e-9).floor() as usize + 1;
        Waveform::from_fn(len, sample_period, self.t0, |t| self.value_at(t))
    }

    pub fn sum(&self) -> f64 {
        self.samples.iter().sum()
    }
}

pub(crate) fn periods_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= PERIOD_RTOL * a.abs().max(b.abs())
}

/// Full discrete convolution, length `x.len() + h.len() - 1`.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let mut y = vec![0.0; x.len() + h.len() - 1];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (k, &hk) in h.iter().enumerate() {
            y[i + k] += xi * hk;
        }
    }
    y
}

/// Trapezoidal control pulse: linear ramps of `ramp_time` around a plateau.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    pub amplitude: f64,
    pub ramp_time: f64,
    pub plateau_time: f64,
    #[serde(default)]
    pub pre_pad: f64,
    #[serde(default)]
    pub post_pad: f64,
}

impl PulseSpec {
    pub fn new(amplitude: f64, ramp_time: f64, plateau_time: f64) -> Self {
        Self { amplitude, ramp_time, plateau_time, pre_pad: 0.0, post_pad: 0.0 }
    }

    pub fn with_pads(mut self, pre_pad: f64, post_pad: f64) -> Self {
        self.pre_pad = pre_pad;
        self.post_pad = post_pad;
        self
    }

    pub fn total_duration(&self) -> f64 {
        self.pre_pad + 2.0 * self.ramp_time + self.plateau_time + self.post_pad
    }

    /// Start and end of the full-amplitude plateau.
    pub fn plateau_window(&self) -> (f64, f64) {
        let start = self.pre_pad + self.ramp_time;
        (start, start + self.plateau_time)
    }

    fn validate(&self) -> Result<()> {
        if !self.amplitude.is_finite() {
            return invalid("pulse amplitude must be finite");
        }
        if !(self.plateau_time > 0.0) {
            return invalid(format!("plateau time must be positive, got {}", self.plateau_time));
        }
        for (name, v) in [("ramp_time", self.ramp_time), ("pre_pad", self.pre_pad), ("post_pad", self.post_pad)] {
            if !(v >= 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Samples the trapezoid on a uniform grid starting at t = 0.
///
/// The plateau occupies `[pre_pad + ramp, pre_pad + ramp + plateau)`; with a
/// zero ramp the falling edge is an ideal step at the end of that interval.
pub fn synth_square(spec: &PulseSpec, sample_period: f64) -> Result<Waveform> {
    spec.validate()?;
    if !(sample_period > 0.0) {
        return invalid(format!("sample period must be positive, got {sample_period}"));
    }
    let eps = 1e-9 * sample_period;
    let rise_start = spec.pre_pad;
    let (plat_start, plat_end) = spec.plateau_window();
    let fall_end = plat_end + spec.ramp_time;
    let len = (spec.total_duration() / sample_period + 1e-9).round() as usize + 1;
    let shape = |t: f64| -> f64 {
        if t < rise_start - eps {
            0.0
        } else if t < plat_start - eps {
            (t - rise_start) / spec.ramp_time
        } else if t < plat_end - eps {
            1.0
        } else if t < fall_end - eps {
            1.0 - (t - plat_end).max(0.0) / spec.ramp_time
        } else {
            0.0
        }
    };
    let samples = (0..len)
        .map(|n| {
            let v = shape(n as f64 * sample_period);
            if v == 1.0 { spec.amplitude } else { spec.amplitude * v }
        })
        .collect();
    Waveform::new(samples, sample_period, 0.0)
}

/// Causal linear time-invariant model of a drive line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistortionChannel {
    /// Unity-DC-gain one-pole low pass with time constant `tau` (ns),
    /// discretized as `y[n] = (1 - a) x[n] + a y[n-1]`, `a = exp(-T_s / tau)`.
    OnePoleLowPass { tau: f64 },
    /// Discrete taps `h[k]` applied as `y[n] = sum_k h[k] x[n-k]`.
    ExplicitImpulse { taps: Waveform },
    /// Stages applied in order. An empty list is the identity channel.
    Composition { stages: Vec<DistortionChannel> },
}

impl DistortionChannel {
    pub fn identity() -> Self {
        DistortionChannel::Composition { stages: Vec::new() }
    }

    pub fn one_pole(tau: f64) -> Self {
        DistortionChannel::OnePoleLowPass { tau }
    }

    pub fn dc_gain(&self) -> f64 {
        match self {
            DistortionChannel::OnePoleLowPass { .. } => 1.0,
            DistortionChannel::ExplicitImpulse { taps } => taps.sum(),
            DistortionChannel::Composition { stages } => stages.iter().map(|s| s.dc_gain()).product(),
        }
    }

    /// Short human-readable description, used in metadata files.
    pub fn describe(&self) -> String {
        match self {
            DistortionChannel::OnePoleLowPass { tau } => format!("one_pole(tau={tau} ns)"),
            DistortionChannel::ExplicitImpulse { taps } => {
                format!("explicit_impulse({} taps @ {} ns)", taps.len(), taps.sample_period())
            }
            DistortionChannel::Composition { stages } if stages.is_empty() => "identity".to_string(),
            DistortionChannel::Composition { stages } => {
                let parts: Vec<String> = stages.iter().map(|s| s.describe()).collect();
                format!("composition[{}]", parts.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ApplyOptions {
    /// Resample explicit kernels onto the signal's grid instead of rejecting
    /// a sample-period mismatch.
    pub resample: bool,
}

pub fn apply_channel(channel: &DistortionChannel, x: &Waveform) -> Result<Waveform> {
    apply_channel_with(channel, x, ApplyOptions::default())
}

pub fn apply_channel_with(channel: &DistortionChannel, x: &Waveform, opts: ApplyOptions) -> Result<Waveform> {
    match channel {
        DistortionChannel::OnePoleLowPass { tau } => {
            if !(*tau > 0.0 && tau.is_finite()) {
                return invalid(format!("one-pole time constant must be positive, got {tau}"));
            }
            let a = (-x.sample_period() / tau).exp();
            let mut prev = 0.0;
            let samples = x
                .samples()
                .iter()
                .map(|&xn| {
                    prev = (1.0 - a) * xn + a * prev;
                    prev
                })
                .collect();
            Waveform::new(samples, x.sample_period(), x.t0())
        }
        DistortionChannel::ExplicitImpulse { taps } => {
            let kernel = if taps.same_period(x) {
                taps.samples().to_vec()
            } else if opts.resample {
                let r = taps.resample_linear(x.sample_period())?;
                // keep the DC gain of the original taps
                let (orig, new) = (taps.sum(), r.sum());
                let scale = if orig != 0.0 && new != 0.0 { orig / new } else { x.sample_period() / taps.sample_period() };
                r.samples().iter().map(|v| v * scale).collect()
            } else {
                return invalid(format!(
                    "kernel sample period {} ns does not match signal period {} ns",
                    taps.sample_period(),
                    x.sample_period()
                ));
            };
            Waveform::new(convolve(x.samples(), &kernel), x.sample_period(), x.t0())
        }
        DistortionChannel::Composition { stages } => {
            let mut y = x.clone();
            for stage in stages {
                y = apply_channel_with(stage, &y, opts)?;
            }
            Ok(y)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResponse {
    pub waveform: Waveform,
    pub dc_gain: f64,
    /// Set when the DC gain vanishes and normalization was skipped.
    pub degenerate: bool,
}

/// Response to a unit step starting at t = 0, normalized by the DC gain.
pub fn step_response(channel: &DistortionChannel, duration: f64, sample_period: f64) -> Result<StepResponse> {
    if !(duration > 0.0) {
        return invalid(format!("duration must be positive, got {duration}"));
    }
    let len = (duration / sample_period + 1e-9).floor() as usize + 1;
    let step = Waveform::unit_step(len, sample_period)?;
    let y = apply_channel_with(channel, &step, ApplyOptions { resample: true })?.resized(len)?;
    let dc_gain = channel.dc_gain();
    if dc_gain.abs() < 1e-12 {
        return Ok(StepResponse { waveform: y, dc_gain, degenerate: true });
    }
    Ok(StepResponse { waveform: y.scaled(1.0 / dc_gain)?, dc_gain, degenerate: false })
}

/// Forward difference of a step response divided by the sample period, with
/// `s(0-) = 0`. The result is an impulse-response density; multiply by the
/// sample period to obtain discrete taps.
pub fn impulse_from_step(s: &Waveform) -> Result<Waveform> {
    if s.len() < 2 {
        return invalid("step response needs at least two samples");
    }
    let ts = s.sample_period();
    let mut prev = 0.0;
    let h = s
        .samples()
        .iter()
        .map(|&v| {
            let d = (v - prev) / ts;
            prev = v;
            d
        })
        .collect();
    Waveform::new(h, ts, s.t0())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn square_with_ramp_at_one_gs() {
        let w = synth_square(&PulseSpec::new(1.0, 1.0, 3.0), 1.0).unwrap();
        assert_eq!(w.samples(), &[0.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn square_fine_ramp_is_linear() {
        let w = synth_square(&PulseSpec::new(2.0, 1.0, 3.0), 0.25).unwrap();
        assert_abs_diff_eq!(w.samples()[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(w.samples()[2], 1.0, epsilon = 1e-12);
        // falling edge: t = 4.5 is halfway down
        assert_abs_diff_eq!(w.value_at(4.5), 1.0, epsilon = 1e-12);
        assert_eq!(*w.samples().last().unwrap(), 0.0);
    }

    #[test]
    fn zero_amplitude_is_all_zero() {
        let w = synth_square(&PulseSpec::new(0.0, 1.0, 3.0).with_pads(2.0, 2.0), 0.5).unwrap();
        assert!(w.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn degenerate_ramp_gives_exact_plateau_count() {
        let w = synth_square(&PulseSpec::new(1.0, 0.0, 2.0), 0.5).unwrap();
        let plateau = w.samples().iter().filter(|&&s| s == 1.0).count();
        assert_eq!(plateau, 4);
        assert!(w.samples().iter().all(|&s| s == 0.0 || s == 1.0));
    }

    #[test]
    fn plateau_hits_amplitude_exactly() {
        let amp = 0.123_456_789;
        let spec = PulseSpec::new(amp, 0.3, 2.7).with_pads(0.7, 1.1);
        let w = synth_square(&spec, 0.1).unwrap();
        let (a, b) = spec.plateau_window();
        for (t, &v) in w.times().zip(w.samples()) {
            if t > a + 1e-6 && t < b - 1e-6 {
                assert_eq!(v, amp);
            }
        }
    }

    #[test]
    fn rejects_bad_pulse() {
        assert!(synth_square(&PulseSpec::new(1.0, 1.0, 0.0), 1.0).is_err());
        assert!(synth_square(&PulseSpec::new(1.0, 1.0, 1.0), 0.0).is_err());
        assert!(synth_square(&PulseSpec::new(1.0, -1.0, 1.0), 1.0).is_err());
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = Waveform::new(vec![0.3, -1.0, 2.5, 0.0, 4.0], 1.0, 0.0).unwrap();
        let ch = DistortionChannel::ExplicitImpulse { taps: Waveform::delta(1, 1.0).unwrap() };
        assert_eq!(apply_channel(&ch, &x).unwrap().samples(), x.samples());
    }

    #[test]
    fn one_pole_step_matches_direct_recursion() {
        let a = (-1.0f64).exp();
        let y = apply_channel(&DistortionChannel::one_pole(1.0), &Waveform::unit_step(12, 1.0).unwrap()).unwrap();
        let mut prev = 0.0;
        for (n, &v) in y.samples().iter().enumerate() {
            prev = (1.0 - a) * 1.0 + a * prev;
            assert_abs_diff_eq!(v, prev, epsilon = 1e-15);
            assert_abs_diff_eq!(v, 1.0 - a.powi(n as i32 + 1), epsilon = 1e-14);
        }
        assert_abs_diff_eq!(a, 0.36788, epsilon = 1e-5);
    }

    #[test]
    fn composition_with_delta_matches_single_stage() {
        let x = synth_square(&PulseSpec::new(1.0, 0.0, 5.0).with_pads(1.0, 5.0), 1.0).unwrap();
        let single = apply_channel(&DistortionChannel::one_pole(1.0), &x).unwrap();
        let comp = DistortionChannel::Composition {
            stages: vec![
                DistortionChannel::one_pole(1.0),
                DistortionChannel::ExplicitImpulse { taps: Waveform::delta(1, 1.0).unwrap() },
            ],
        };
        assert_eq!(apply_channel(&comp, &x).unwrap().samples(), single.samples());
    }

    #[test]
    fn tiny_tau_is_identity() {
        let x = synth_square(&PulseSpec::new(1.0, 1.0, 3.0).with_pads(1.0, 1.0), 0.5).unwrap();
        let y = apply_channel(&DistortionChannel::one_pole(1e-6), &x).unwrap();
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn period_mismatch_rejected_unless_resampling() {
        let x = Waveform::unit_step(10, 0.5).unwrap();
        let ch = DistortionChannel::ExplicitImpulse { taps: Waveform::new(vec![0.5, 0.5], 1.0, 0.0).unwrap() };
        assert!(apply_channel(&ch, &x).is_err());
        let y = apply_channel_with(&ch, &x, ApplyOptions { resample: true }).unwrap();
        // DC gain preserved by the tap rescaling
        assert_abs_diff_eq!(y.samples()[4], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn step_response_identity_and_one_pole() {
        let id = step_response(&DistortionChannel::identity(), 5.0, 0.5).unwrap();
        assert!(id.waveform.samples().iter().all(|&v| v == 1.0));

        let tau = 1.0;
        let ts = 0.01;
        let sr = step_response(&DistortionChannel::one_pole(tau), 10.0, ts).unwrap();
        for (t, &v) in sr.waveform.times().zip(sr.waveform.samples()) {
            // the recursion's sample n equals the continuous response at (n + 1) T_s
            let analytic = 1.0 - (-t / tau).exp();
            assert!((v - analytic).abs() <= ts / tau, "t={t}: {v} vs {analytic}");
        }
    }

    #[test]
    fn cascade_of_two_poles() {
        let tau = 1.0;
        let ts = 0.005;
        let ch = DistortionChannel::Composition {
            stages: vec![DistortionChannel::one_pole(tau), DistortionChannel::one_pole(tau)],
        };
        let sr = step_response(&ch, 10.0, ts).unwrap();
        for (t, &v) in sr.waveform.times().zip(sr.waveform.samples()) {
            let analytic = 1.0 - (1.0 + t / tau) * (-t / tau).exp();
            assert!((v - analytic).abs() <= 2.0 * ts / tau, "t={t}: {v} vs {analytic}");
        }
    }

    #[test]
    fn zero_dc_gain_is_flagged() {
        let ch = DistortionChannel::ExplicitImpulse { taps: Waveform::new(vec![1.0, -1.0], 1.0, 0.0).unwrap() };
        let sr = step_response(&ch, 4.0, 1.0).unwrap();
        assert!(sr.degenerate);
        assert_eq!(sr.waveform.samples(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn impulse_of_unit_step_is_scaled_delta() {
        let s = Waveform::unit_step(5, 0.5).unwrap();
        let h = impulse_from_step(&s).unwrap();
        assert_eq!(h.samples(), &[2.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn impulse_of_exponential_step() {
        let tau = 1.0;
        let ts = 0.001;
        let s = Waveform::from_fn(5000, ts, ts, |t| 1.0 - (-t / tau).exp()).unwrap();
        let h = impulse_from_step(&s).unwrap();
        for n in 1..h.len() {
            let t = s.time(n);
            let analytic = (-t / tau).exp() / tau;
            assert!((h.samples()[n] - analytic).abs() <= ts / tau, "n={n}");
        }
    }

    #[test]
    fn rejects_non_finite_samples() {
        assert!(Waveform::new(vec![1.0, f64::NAN], 1.0, 0.0).is_err());
        assert!(Waveform::new(vec![], 1.0, 0.0).is_err());
        assert!(Waveform::new(vec![1.0], -1.0, 0.0).is_err());
    }
}
