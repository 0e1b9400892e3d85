//! Two-level charge dynamics under a time-dependent detuning.
//!
//! All detunings, couplings and rates are angular frequencies in rad/ns and
//! times are in ns. The population variable follows the `w = 2 p_e`
//! convention, so `w` lies in `[0, 1]` for physical states: `w = 0` is the
//! diabatic ground charge state, and a fully mixed state has `w = 1`.
//!
//! The Bloch equations with pure dephasing `kappa` and detuning
//! `delta(t) = eps(t) - eps0` read
//!
//! ```text
//! du/dt = -kappa u + delta v
//! dv/dt = -delta u - kappa v - t_c (w - 1)
//! dw/dt =  t_c v
//! ```
//!
//! and keep `u^2 + v^2 + (w - 1)^2 <= 1`.

mod ode;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::waveform::Waveform;

/// Parameters of the two-level system, all in rad/ns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoLevelParams {
    /// Detuning at which the two charge states cross.
    pub eps0: f64,
    pub t_c: f64,
    pub kappa: f64,
}

impl TwoLevelParams {
    /// `t_c` may be zero (decoupled levels); `kappa` must be positive.
    pub fn new(eps0: f64, t_c: f64, kappa: f64) -> Result<Self> {
        let p = Self { eps0, t_c, kappa };
        p.validate()?;
        Ok(p)
    }

    /// Builds parameters from cyclic frequencies in GHz.
    pub fn from_ghz(eps0_ghz: f64, t_c_ghz: f64, kappa_ghz: f64) -> Result<Self> {
        use crate::units::ghz_to_rad_per_ns as g;
        Self::new(g(eps0_ghz), g(t_c_ghz), g(kappa_ghz))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.eps0.is_finite() || !self.t_c.is_finite() || !self.kappa.is_finite() {
            return invalid("two-level parameters must be finite");
        }
        if self.t_c < 0.0 {
            return invalid(format!("t_c must be non-negative, got {}", self.t_c));
        }
        if self.kappa <= 0.0 {
            return invalid(format!("kappa must be positive, got {}", self.kappa));
        }
        Ok(())
    }

    /// True when `kappa < 3 t_c`, where the rate formulas lose accuracy.
    pub fn asymptotic_warning(&self) -> bool {
        self.kappa < 3.0 * self.t_c
    }

    pub fn with_t_c(mut self, t_c: f64) -> Self {
        self.t_c = t_c;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochState {
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl BlochState {
    pub fn new(u: f64, v: f64, w: f64) -> Self {
        Self { u, v, w }
    }

    /// Diabatic ground state with no coherence.
    pub fn diabatic_ground() -> Self {
        Self { u: 0.0, v: 0.0, w: 0.0 }
    }

    /// Ground state of the Hamiltonian at detuning `eps`.
    pub fn ground_state(eps: f64, params: &TwoLevelParams) -> Self {
        let delta = eps - params.eps0;
        let omega = delta.hypot(params.t_c);
        if omega == 0.0 {
            return Self::diabatic_ground();
        }
        Self { u: -params.t_c / omega, v: 0.0, w: 1.0 + delta / omega }
    }

    /// Squared length of the Bloch vector, `u^2 + v^2 + (w-1)^2`.
    pub fn norm_sq(&self) -> f64 {
        self.u * self.u + self.v * self.v + (self.w - 1.0) * (self.w - 1.0)
    }

    /// `2 p_e` measured in the energy eigenbasis at detuning `eps`.
    pub fn energy_w(&self, eps: f64, params: &TwoLevelParams) -> f64 {
        let delta = eps - params.eps0;
        let omega = delta.hypot(params.t_c);
        if omega == 0.0 {
            return self.w;
        }
        1.0 + (params.t_c * self.u - delta * (self.w - 1.0)) / omega
    }

    /// Instantaneous relaxation rate `-(dw/dt)/(w-1)`.
    pub fn relaxation_rate(&self, params: &TwoLevelParams) -> f64 {
        -params.t_c * self.v / (self.w - 1.0)
    }

    fn to_array(self) -> ode::State {
        [self.u, self.v, self.w]
    }

    fn from_array(a: ode::State) -> Self {
        Self { u: a[0], v: a[1], w: a[2] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsResult {
    pub times: Vec<f64>,
    pub states: Vec<BlochState>,
    /// `2 p_e` in the energy eigenbasis at the last detuning sample.
    pub final_w: f64,
    /// Set when the parameters fall outside the asymptotic regime.
    pub warning: bool,
    pub steps: usize,
}

impl DynamicsResult {
    pub fn final_state(&self) -> BlochState {
        *self.states.last().expect("trajectory is never empty")
    }

    /// Population `w` on the time grid.
    pub fn w_waveform(&self, sample_period: f64) -> Result<Waveform> {
        Waveform::new(self.states.iter().map(|s| s.w).collect(), sample_period, self.times[0])
    }

    /// `-(dw/dt)/(w-1)` at every sample.
    pub fn rates(&self, params: &TwoLevelParams) -> Vec<f64> {
        self.states.iter().map(|s| s.relaxation_rate(params)).collect()
    }
}

/// Integrates the Bloch equations along `detuning`, linearly interpolated
/// between samples, starting from `init` at the first sample.
pub fn integrate_lindblad(params: &TwoLevelParams, detuning: &Waveform, init: BlochState, rel_tol: f64) -> Result<DynamicsResult> {
    params.validate()?;
    if !(rel_tol > 1e-12 && rel_tol < 1e-2) {
        return invalid(format!("rel_tol must lie in (1e-12, 1e-2), got {rel_tol}"));
    }
    if let Some(i) = detuning.samples().iter().position(|v| !v.is_finite()) {
        return invalid(format!("detuning sample {i} is not finite"));
    }
    if ![init.u, init.v, init.w].iter().all(|v| v.is_finite()) {
        return invalid("initial state must be finite");
    }
    let (eps0, t_c, kappa) = (params.eps0, params.t_c, params.kappa);
    let ts = detuning.sample_period();
    let samples = detuning.samples();
    let scale = samples.iter().map(|e| (e - eps0).abs()).fold(kappa + t_c, f64::max);
    let mut stepper = ode::Stepper::new(rel_tol, rel_tol * 1e-2, (0.1 / scale).min(ts));

    let mut times = Vec::with_capacity(samples.len());
    let mut states = Vec::with_capacity(samples.len());
    let mut y = init.to_array();
    times.push(detuning.t0());
    states.push(init);
    for k in 0..samples.len().saturating_sub(1) {
        let (ta, tb) = (detuning.time(k), detuning.time(k + 1));
        let (da, db) = (samples[k] - eps0, samples[k + 1] - eps0);
        let slope = (db - da) / (tb - ta);
        let rhs = move |t: f64, s: &ode::State| {
            let d = da + slope * (t - ta);
            [-kappa * s[0] + d * s[1], -d * s[0] - kappa * s[1] - t_c * (s[2] - 1.0), t_c * s[1]]
        };
        stepper.advance(&rhs, ta, tb, &mut y)?;
        times.push(tb);
        states.push(BlochState::from_array(y));
    }
    let last = *samples.last().expect("waveforms are non-empty");
    let final_w = states.last().unwrap().energy_w(last, params);
    Ok(DynamicsResult { times, states, final_w, warning: params.asymptotic_warning(), steps: stepper.steps })
}

/// Steady-state relaxation rate `kappa t_c^2 / (kappa^2 + (eps - eps0)^2)`.
pub fn gamma_steady(eps: f64, params: &TwoLevelParams) -> f64 {
    let d = eps - params.eps0;
    params.kappa * params.t_c * params.t_c / (params.kappa * params.kappa + d * d)
}

/// Relaxation rate including the first-order correction in the sweep rate
/// `eps_dot`. Fails where `(eps-eps0)^2 + kappa^2 <= t_c^2`.
pub fn gamma_first_order(eps: f64, eps_dot: f64, params: &TwoLevelParams) -> Result<f64> {
    let delta = eps - params.eps0;
    let tc2 = params.t_c * params.t_c;
    let d = delta * delta + params.kappa * params.kappa;
    if d <= tc2 {
        return Err(Error::SingularRegime { d, tc2 });
    }
    Ok(tc2 * (params.kappa * d + delta * eps_dot) / (d * (d - tc2)))
}

/// Which relaxation-rate formula to integrate along a detuning trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateModel {
    Steady,
    FirstOrder,
}

/// `atan(b) - atan(a)` without cancellation when `a` and `b` are close.
fn atan_diff(a: f64, b: f64) -> f64 {
    if a * b > -1.0 {
        ((b - a) / (1.0 + a * b)).atan()
    } else {
        b.atan() - a.atan()
    }
}

/// `integral Gamma_st dt` over a segment where the detuning moves linearly
/// from `ea` to `eb` in time `dt`.
fn steady_segment(ea: f64, eb: f64, dt: f64, params: &TwoLevelParams) -> f64 {
    let k = params.kappa;
    let de = eb - ea;
    let (xa, xb) = ((ea - params.eps0) / k, (eb - params.eps0) / k);
    // the closed form divides by the sweep rate; use the midpoint rule when
    // it is too small to resolve
    if de.abs() <= 1e-9 * k {
        return gamma_steady(0.5 * (ea + eb), params) * dt;
    }
    params.t_c * params.t_c * dt / de * atan_diff(xa, xb)
}

/// Accumulated relaxation exponent `integral Gamma dt` along a piecewise
/// linear detuning trace.
pub fn rate_exponent(detuning: &Waveform, params: &TwoLevelParams, model: RateModel) -> Result<f64> {
    params.validate()?;
    let s = detuning.samples();
    let ts = detuning.sample_period();
    let mut total = 0.0;
    for pair in s.windows(2) {
        let (ea, eb) = (pair[0], pair[1]);
        total += match model {
            RateModel::Steady => steady_segment(ea, eb, ts, params),
            RateModel::FirstOrder => {
                let slope = (eb - ea) / ts;
                // composite Simpson on 4 panels
                let n = 4;
                let h = ts / n as f64;
                let mut acc = 0.0;
                for i in 0..=n {
                    let e = ea + slope * h * i as f64;
                    let wgt = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                    acc += wgt * gamma_first_order(e, slope, params)?;
                }
                acc * h / 3.0
            }
        };
    }
    Ok(total)
}

/// Final population from a rate model: `w = 1 - (1 - w0) exp(-integral Gamma dt)`.
pub fn rate_model_w(detuning: &Waveform, params: &TwoLevelParams, model: RateModel, w0: f64) -> Result<f64> {
    Ok(1.0 - (1.0 - w0) * (-rate_exponent(detuning, params, model)?).exp())
}

/// `sum pi t_c^2 / |d eps/dt|` over every resonance crossing of a piecewise
/// linear detuning trace. A segment sitting exactly on resonance yields an
/// infinite exponent.
pub fn crossing_exponent(detuning: &Waveform, params: &TwoLevelParams) -> f64 {
    let s = detuning.samples();
    let ts = detuning.sample_period();
    let tc2 = params.t_c * params.t_c;
    let mut total = 0.0;
    for pair in s.windows(2) {
        let (da, db) = (pair[0] - params.eps0, pair[1] - params.eps0);
        // half-open: a crossing belongs to the segment where the sign changes
        // from strictly below to at-or-above (or the reverse)
        let crosses = (da < 0.0 && db >= 0.0) || (da >= 0.0 && db < 0.0);
        if da == 0.0 && db == 0.0 {
            return f64::INFINITY;
        }
        if crosses {
            let rate = (db - da).abs() / ts;
            total += std::f64::consts::PI * tc2 / rate;
        }
    }
    total
}

/// Where a step-response shape first reaches a level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub time: f64,
    /// Left-hand slope of `s` at the crossing; infinite at a jump.
    pub slope: f64,
}

/// Monotone step-response shape `s(t)` for the simplified signal models.
pub trait StepShape {
    fn value(&self, t: f64) -> f64;
    /// First time in `[0, t_max]` with `s >= level`, if any.
    fn crossing(&self, level: f64, t_max: f64) -> Option<Crossing>;
}

/// `s(t) = 1 - exp(-t/tau)`.
#[derive(Debug, Clone, Copy)]
pub struct OnePoleStep {
    pub tau: f64,
}

impl StepShape for OnePoleStep {
    fn value(&self, t: f64) -> f64 {
        if t < 0.0 {
            0.0
        } else {
            -(-t / self.tau).exp_m1()
        }
    }
    fn crossing(&self, level: f64, t_max: f64) -> Option<Crossing> {
        if level >= 1.0 {
            return None;
        }
        let time = if level <= 0.0 { 0.0 } else { -self.tau * (-level).ln_1p() };
        (time <= t_max).then(|| Crossing { time, slope: (-time / self.tau).exp() / self.tau })
    }
}

/// `s(t) = min(t / ramp, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct LinearRampStep {
    pub ramp: f64,
}

impl StepShape for LinearRampStep {
    fn value(&self, t: f64) -> f64 {
        (t / self.ramp).clamp(0.0, 1.0)
    }
    fn crossing(&self, level: f64, t_max: f64) -> Option<Crossing> {
        if level > 1.0 {
            return None;
        }
        let time = level.max(0.0) * self.ramp;
        (time <= t_max).then(|| Crossing { time, slope: 1.0 / self.ramp })
    }
}

/// A sampled step response, linearly interpolated, zero before its first
/// sample.
impl StepShape for Waveform {
    fn value(&self, t: f64) -> f64 {
        if t < self.t0() {
            0.0
        } else {
            self.value_at(t.min(self.end_time()))
        }
    }
    fn crossing(&self, level: f64, t_max: f64) -> Option<Crossing> {
        let s = self.samples();
        let ts = self.sample_period();
        if s[0] >= level {
            return (self.t0() <= t_max).then_some(Crossing { time: self.t0(), slope: f64::INFINITY });
        }
        for k in 0..s.len() - 1 {
            if s[k] < level && s[k + 1] >= level {
                let time = self.time(k) + (level - s[k]) / (s[k + 1] - s[k]) * ts;
                return (time <= t_max).then_some(Crossing { time, slope: (s[k + 1] - s[k]) / ts });
            }
        }
        None
    }
}

fn check_amp(eps_amp: f64) -> Result<()> {
    if !(eps_amp > 0.0 && eps_amp.is_finite()) {
        return invalid(format!("eps_amp must be positive, got {eps_amp}"));
    }
    Ok(())
}

/// Simplified DAPS signal: `w = 1 - exp(-integral_0^t Gamma_st(eps_amp s(t')) dt')`,
/// evaluated segment by segment in closed form after changing variables
/// from time to detuning. `s` must start at `t = 0`, be non-decreasing, and
/// is taken to jump from zero to its first sample.
pub fn daps_signal_integral(t: f64, eps_amp: f64, s: &Waveform, params: &TwoLevelParams) -> Result<f64> {
    params.validate()?;
    check_amp(eps_amp)?;
    if s.t0().abs() > 1e-12 * s.sample_period() {
        return invalid("step response must start at t = 0");
    }
    let vals = s.samples();
    let peak = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if vals[0] < -1e-12 * peak.max(1.0) {
        return Err(Error::PreconditionViolation("step response starts below zero".into()));
    }
    let ts = s.sample_period();
    let mut exponent = 0.0;
    for k in 0..vals.len().saturating_sub(1) {
        let (ta, tb) = (s.time(k), s.time(k + 1));
        if ta >= t {
            break;
        }
        let ds = vals[k + 1] - vals[k];
        if ds < -1e-12 * peak.max(1.0) {
            return Err(Error::PreconditionViolation(format!("step response decreases between {ta} ns and {tb} ns")));
        }
        let (end, frac) = if tb > t { (t, (t - ta) / ts) } else { (tb, 1.0) };
        let ea = eps_amp * vals[k];
        let eb = eps_amp * (vals[k] + frac * ds);
        exponent += steady_segment(ea, eb, end - ta, params);
    }
    if t > s.end_time() {
        exponent += gamma_steady(eps_amp * vals[vals.len() - 1], params) * (t - s.end_time());
    }
    Ok(-(-exponent).exp_m1())
}

/// Delta-function DAPS signal: `1 - exp(-pi t_c^2 / eps_dot(t'))` where `t'`
/// is the first time the detuning `eps_amp s(t)` reaches resonance, or 0 if
/// that happens after `t` or never.
pub fn daps_signal_delta(t: f64, eps_amp: f64, s: &dyn StepShape, params: &TwoLevelParams) -> Result<f64> {
    params.validate()?;
    check_amp(eps_amp)?;
    let level = params.eps0 / eps_amp;
    let Some(c) = s.crossing(level, t) else {
        return Ok(0.0);
    };
    let eps_dot = eps_amp * c.slope;
    if eps_dot <= 0.0 {
        return Ok(1.0);
    }
    Ok(-(-std::f64::consts::PI * params.t_c * params.t_c / eps_dot).exp_m1())
}
