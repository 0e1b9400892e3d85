//! Free-induction coherence under `1/f^beta` detuning noise and Gaussian
//! decay fits.
//!
//! The coherence function is `exp(-chi0(t))` with
//!
//! ```text
//! chi0(t) = t^2 (d omega_q / d eps)^2  integral g0(omega t) S(f) d omega
//! ```
//!
//! where `omega_q = sqrt(eps^2 + t_c^2)`, `g0(x) = (sin(x/2) / (x/2))^2` and
//! `S(f) = A^2 / f^beta` with `A` the amplitude at 1 Hz. The integral runs
//! over angular frequency `omega = 2 pi f` between the configured cutoffs, so
//! `d omega = 2 pi df`. The PSD amplitude is converted from ueV to rad/ns
//! with [`UEV_TO_RAD_PER_NS`], and `t` is in ns.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// `1 ueV / hbar` in rad/ns (`2 pi * 0.2417989 GHz`).
pub const UEV_TO_RAD_PER_NS: f64 = 2.0 * PI * 0.241_798_9;

/// Relative change between successive node doublings accepted as converged.
pub const QUADRATURE_RTOL: f64 = 1e-4;

const MAX_NODES: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// PSD amplitude at 1 Hz, ueV.
    pub a_1hz: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Lower integration cutoff, Hz.
    #[serde(default = "default_f_low")]
    pub f_low: f64,
    /// Upper integration cutoff, Hz.
    #[serde(default = "default_f_high")]
    pub f_high: f64,
}

fn default_beta() -> f64 {
    1.0
}
fn default_f_low() -> f64 {
    1.0
}
fn default_f_high() -> f64 {
    1e11
}

impl NoiseSpec {
    pub fn new(a_1hz: f64) -> Result<Self> {
        let s = Self { a_1hz, beta: default_beta(), f_low: default_f_low(), f_high: default_f_high() };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a_1hz > 0.0 && self.a_1hz.is_finite()) {
            return invalid(format!("a_1hz must be positive, got {}", self.a_1hz));
        }
        if !self.beta.is_finite() {
            return invalid("beta must be finite");
        }
        if !(self.f_low > 0.0 && self.f_low < self.f_high && self.f_high.is_finite()) {
            return invalid(format!("cutoffs must satisfy 0 < f_low < f_high, got {} and {}", self.f_low, self.f_high));
        }
        Ok(())
    }

    /// PSD amplitude at 1 Hz in rad/ns.
    pub fn amplitude_rad_per_ns(&self) -> f64 {
        self.a_1hz * UEV_TO_RAD_PER_NS
    }
}

/// `(sin(x/2) / (x/2))^2`.
pub fn g0(x: f64) -> f64 {
    let h = 0.5 * x;
    if h.abs() < 1e-4 {
        1.0 - h * h / 3.0
    } else {
        let s = h.sin() / h;
        s * s
    }
}

/// `(d omega_q / d eps)^2 = eps^2 / (eps^2 + t_c^2)`.
pub fn sensitivity(eps: f64, t_c: f64) -> f64 {
    let e2 = eps * eps;
    let d = e2 + t_c * t_c;
    if d == 0.0 {
        0.0
    } else {
        e2 / d
    }
}

/// Trapezoid rule in `ln x` on `[a, b]`, doubling the node count until the
/// relative change drops below `rtol`. `f` receives `x` and must already
/// include the `x` Jacobian of the log substitution.
pub fn log_trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, rtol: f64) -> Result<f64> {
    if !(a > 0.0 && b > a) {
        return invalid(format!("log quadrature needs 0 < a < b, got {a} and {b}"));
    }
    let (la, lb) = (a.ln(), b.ln());
    let mut n = 1024usize;
    let mut h = (lb - la) / n as f64;
    let mut sum = 0.5 * (f(a) + f(b)) + (1..n).map(|i| f((la + i as f64 * h).exp())).sum::<f64>();
    let mut est = sum * h;
    while n < MAX_NODES {
        let mid: f64 = (0..n).map(|i| f((la + (i as f64 + 0.5) * h).exp())).sum();
        sum += mid;
        n *= 2;
        h *= 0.5;
        let next = sum * h;
        let change = (next - est).abs();
        est = next;
        if change <= rtol * est.abs() || est == 0.0 {
            return Ok(est);
        }
    }
    Err(Error::Accuracy(format!("log quadrature did not converge to {rtol:e} within {MAX_NODES} nodes")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCurve {
    pub times: Vec<f64>,
    pub coherence: Vec<f64>,
    pub chi0: Vec<f64>,
    /// Detuning from the avoided crossing, rad/ns.
    pub eps: f64,
    pub t_c: f64,
    pub spec: NoiseSpec,
}

impl CoherenceCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        wr.write_record(["t_ns", "coherence"])?;
        for (t, c) in self.times.iter().zip(&self.coherence) {
            wr.write_record([t.to_string(), c.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `chi0(t)` for a single evolution time `t` in ns.
pub fn chi0(t: f64, eps: f64, t_c: f64, spec: &NoiseSpec) -> Result<f64> {
    spec.validate()?;
    let sens = sensitivity(eps, t_c);
    if t == 0.0 || sens == 0.0 {
        return Ok(0.0);
    }
    let ts = t * 1e-9;
    let beta = spec.beta;
    // d omega = 2 pi f d(ln f)
    let integral = log_trapezoid(|f| g0(2.0 * PI * f * ts) * f.powf(1.0 - beta), spec.f_low, spec.f_high, QUADRATURE_RTOL)?;
    let a = spec.amplitude_rad_per_ns();
    Ok(t * t * sens * 2.0 * PI * a * a * integral)
}

/// Evaluates `exp(-chi0)` on `tgrid` (ns, non-negative, increasing).
pub fn coherence_chi0(tgrid: &[f64], eps: f64, t_c: f64, spec: &NoiseSpec) -> Result<CoherenceCurve> {
    spec.validate()?;
    if tgrid.is_empty() {
        return invalid("time grid is empty");
    }
    if tgrid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return invalid("time grid must be finite and non-negative");
    }
    if tgrid.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("time grid must be strictly increasing");
    }
    let chi: Vec<f64> = tgrid.iter().map(|&t| chi0(t, eps, t_c, spec)).collect::<Result<_>>()?;
    let coherence = chi.iter().map(|c| (-c).exp()).collect();
    Ok(CoherenceCurve { times: tgrid.to_vec(), coherence, chi0: chi, eps, t_c, spec: *spec })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum KappaFit {
    /// `kappa` in ns^-2.
    Fitted { kappa: f64, stderr: f64 },
    /// The curve never drops below 0.9, so the decay is not constrained.
    IllPosed,
}

impl KappaFit {
    pub fn kappa(&self) -> Option<f64> {
        match self {
            KappaFit::Fitted { kappa, .. } => Some(*kappa),
            KappaFit::IllPosed => None,
        }
    }
}

/// Least-squares fit of `exp(-kappa t^2)` to a coherence curve.
pub fn fit_kappa(times: &[f64], coherence: &[f64]) -> Result<KappaFit> {
    if times.len() != coherence.len() || times.len() < 2 {
        return invalid("need at least two matching time and coherence samples");
    }
    if !coherence.iter().any(|&c| c < 0.9) {
        return Ok(KappaFit::IllPosed);
    }
    // log-linear start, weighted by c^2 to undo the log's noise amplification
    let (mut num, mut den) = (0.0, 0.0);
    for (&t, &c) in times.iter().zip(coherence) {
        if c > 1e-12 && c <= 1.0 {
            let w = c * c;
            num += w * t * t * (-c.ln());
            den += w * t.powi(4);
        }
    }
    if den == 0.0 {
        return Err(Error::FitFailure("no usable samples for the initial estimate".into()));
    }
    let mut kappa = num / den;
    // one-parameter Gauss-Newton on c - exp(-kappa t^2)
    for _ in 0..100 {
        let (mut jtr, mut jtj) = (0.0, 0.0);
        for (&t, &c) in times.iter().zip(coherence) {
            let e = (-kappa * t * t).exp();
            let j = -t * t * e;
            jtr += j * (c - e);
            jtj += j * j;
        }
        if jtj == 0.0 {
            break;
        }
        let step = jtr / jtj;
        kappa += step;
        if step.abs() <= 1e-15 * kappa.abs() {
            break;
        }
    }
    let (mut ssr, mut jtj) = (0.0, 0.0);
    for (&t, &c) in times.iter().zip(coherence) {
        let e = (-kappa * t * t).exp();
        ssr += (c - e).powi(2);
        jtj += (t * t * e).powi(2);
    }
    let dof = (times.len() - 1) as f64;
    let stderr = if jtj > 0.0 { (ssr / dof / jtj).sqrt() } else { f64::INFINITY };
    if !kappa.is_finite() {
        return Err(Error::FitFailure("Gaussian decay fit diverged".into()));
    }
    Ok(KappaFit::Fitted { kappa, stderr })
}

pub fn fit_kappa_curve(curve: &CoherenceCurve) -> Result<KappaFit> {
    fit_kappa(&curve.times, &curve.coherence)
}
