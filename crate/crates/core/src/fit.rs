//! Small dense Levenberg–Marquardt curve fitter with covariance estimates,
//! plus the Lorentzian peak models used for spectroscopy rows.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A scalar model `y = f(x; p)` with an analytic gradient in `p`.
pub trait Model {
    fn n_params(&self) -> usize;
    fn eval(&self, x: f64, p: &[f64]) -> f64;
    fn grad(&self, x: f64, p: &[f64], g: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when the relative decrease of the residual sum of squares falls
    /// below this value.
    pub ftol: f64,
    /// Stop when the relative parameter step falls below this value.
    pub xtol: f64,
    pub lambda0: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iter: 200, ftol: 1e-12, xtol: 1e-12, lambda0: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// Standard errors from `s^2 (J^T J)^-1`; `None` when the normal matrix
    /// is singular.
    pub stderr: Option<Vec<f64>>,
    pub ssr: f64,
    pub dof: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn stderr_of(&self, i: usize) -> Option<f64> {
        self.stderr.as_ref().map(|s| s[i])
    }
}

fn ssr_of<M: Model + ?Sized>(model: &M, xs: &[f64], ys: &[f64], p: &[f64]) -> f64 {
    xs.iter().zip(ys).map(|(&x, &y)| (y - model.eval(x, p)).powi(2)).sum()
}

fn jacobian<M: Model + ?Sized>(model: &M, xs: &[f64], ys: &[f64], p: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let np = p.len();
    let mut j = DMatrix::zeros(xs.len(), np);
    let mut r = DVector::zeros(xs.len());
    let mut g = vec![0.0; np];
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        model.grad(x, p, &mut g);
        for k in 0..np {
            j[(i, k)] = g[k];
        }
        r[i] = y - model.eval(x, p);
    }
    (j, r)
}

/// Fits `model` to `(xs, ys)` starting from `p0`.
pub fn curve_fit<M: Model + ?Sized>(model: &M, xs: &[f64], ys: &[f64], p0: &[f64], opts: LmOptions) -> Result<FitResult> {
    let np = model.n_params();
    if p0.len() != np {
        return Err(Error::FitFailure(format!("expected {np} initial parameters, got {}", p0.len())));
    }
    if xs.len() != ys.len() || xs.len() <= np {
        return Err(Error::FitFailure(format!("need more than {np} points, got {}", xs.len())));
    }
    let mut p = p0.to_vec();
    let mut ssr = ssr_of(model, xs, ys, &p);
    if !ssr.is_finite() {
        return Err(Error::FitFailure("non-finite residual at initial guess".into()));
    }
    let mut lambda = opts.lambda0;
    let mut converged = false;
    let mut iterations = 0;
    let scale = ys.iter().map(|y| y * y).sum::<f64>().max(f64::MIN_POSITIVE);

    while iterations < opts.max_iter {
        iterations += 1;
        let (j, r) = jacobian(model, xs, ys, &p);
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;
        if ssr <= 1e-30 * scale {
            converged = true;
            break;
        }
        // scale-free gradient test: cosine between residual and each column
        let gmax = (0..np)
            .map(|k| {
                let d = (jtj[(k, k)] * ssr).sqrt();
                if d > 0.0 { jtr[k].abs() / d } else { 0.0 }
            })
            .fold(0.0, f64::max);
        if gmax <= 1e-12 {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..np {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&jtr),
                None => match a.lu().solve(&jtr) {
                    Some(s) => s,
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                },
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let trial_ssr = ssr_of(model, xs, ys, &trial);
            if trial_ssr.is_finite() && trial_ssr <= ssr {
                let rel_f = (ssr - trial_ssr) / ssr.max(f64::MIN_POSITIVE);
                // a heavily damped step can stall without being at a minimum,
                // so the decrease test only counts for near Gauss-Newton steps
                let small_f = rel_f < opts.ftol && lambda <= 1e-2;
                let small_x = step.iter().zip(&p).all(|(d, v)| d.abs() <= opts.xtol * (v.abs() + opts.xtol));
                p = trial;
                ssr = trial_ssr;
                lambda = (lambda / 3.0).max(1e-15);
                improved = true;
                if small_f || small_x {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !improved {
            // no downhill step exists at any damping: we sit at a minimum
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    let dof = xs.len() - np;
    let (j, _) = jacobian(model, xs, ys, &p);
    let jtj = j.transpose() * &j;
    let s2 = ssr / dof as f64;
    let stderr = jtj.try_inverse().and_then(|inv| {
        let se: Vec<f64> = (0..np).map(|k| (inv[(k, k)] * s2).max(0.0).sqrt()).collect();
        se.iter().all(|v| v.is_finite()).then_some(se)
    });
    Ok(FitResult { params: p, stderr, ssr, dof, iterations, converged })
}

/// `A * g^2 / ((x - x0)^2 + g^2) + c`, parameters `[A, x0, g, c]`.
/// `A` is the peak height above baseline and the FWHM is `2|g|`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Lorentzian;

fn lorentz_terms(x: f64, a: f64, x0: f64, g: f64, out: &mut [f64]) -> f64 {
    let dx = x - x0;
    let q = dx * dx + g * g;
    let shape = g * g / q;
    out[0] = shape;
    out[1] = a * g * g * 2.0 * dx / (q * q);
    out[2] = a * 2.0 * g * dx * dx / (q * q);
    a * shape
}

impl Model for Lorentzian {
    fn n_params(&self) -> usize {
        4
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let dx = x - p[1];
        p[0] * p[2] * p[2] / (dx * dx + p[2] * p[2]) + p[3]
    }
    fn grad(&self, x: f64, p: &[f64], g: &mut [f64]) {
        lorentz_terms(x, p[0], p[1], p[2], &mut g[0..3]);
        g[3] = 1.0;
    }
}

/// Two Lorentzians on a shared baseline, parameters
/// `[A1, x1, g1, A2, x2, g2, c]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoubleLorentzian;

impl Model for DoubleLorentzian {
    fn n_params(&self) -> usize {
        7
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        Lorentzian.eval(x, &[p[0], p[1], p[2], 0.0]) + Lorentzian.eval(x, &[p[3], p[4], p[5], 0.0]) + p[6]
    }
    fn grad(&self, x: f64, p: &[f64], g: &mut [f64]) {
        lorentz_terms(x, p[0], p[1], p[2], &mut g[0..3]);
        lorentz_terms(x, p[3], p[4], p[5], &mut g[3..6]);
        g[6] = 1.0;
    }
}

/// Ordinary least-squares line fit; returns `(slope, intercept, slope_stderr)`.
pub fn linear_regression(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let se = if n > 2 {
        let ssr: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (ssr / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some((slope, intercept, se))
}
