//! Dormand–Prince 5(4) embedded pair with FSAL and PI-free step control.

use crate::error::{Error, Result};

pub(crate) type State = [f64; 3];

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order minus fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy(y: &State, terms: &[(f64, &State)], h: f64) -> State {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..3 {
            out[i] += h * c * k[i];
        }
    }
    out
}

pub(crate) struct Stepper {
    pub rtol: f64,
    pub atol: f64,
    /// Last accepted step, reused as the first trial of the next call.
    pub h: f64,
    pub steps: usize,
}

impl Stepper {
    pub fn new(rtol: f64, atol: f64, h0: f64) -> Self {
        Self { rtol, atol, h: h0, steps: 0 }
    }

    /// Advances `y` from `t0` to `t1` exactly.
    pub fn advance<F>(&mut self, f: &F, t0: f64, t1: f64, y: &mut State) -> Result<()>
    where
        F: Fn(f64, &State) -> State,
    {
        let span = t1 - t0;
        if span <= 0.0 {
            return Ok(());
        }
        let min_step = 1e-13 * t1.abs().max(span).max(1.0);
        let mut t = t0;
        let mut k1 = f(t, y);
        let mut h = self.h.min(span);
        loop {
            let remaining = t1 - t;
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            let k2 = f(t + C2 * h, &axpy(y, &[(A21, &k1)], h));
            let k3 = f(t + C3 * h, &axpy(y, &[(A31, &k1), (A32, &k2)], h));
            let k4 = f(t + C4 * h, &axpy(y, &[(A41, &k1), (A42, &k2), (A43, &k3)], h));
            let k5 = f(t + C5 * h, &axpy(y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], h));
            let k6 = f(t + h, &axpy(y, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h));
            let y_new = axpy(y, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)], h);
            let k7 = f(t + h, &y_new);

            let mut err: f64 = 0.0;
            for i in 0..3 {
                let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
                err = err.max((e / sc).abs());
            }
            if !err.is_finite() {
                return Err(Error::IntegrationFailure { time: t, step: h, reason: "non-finite error estimate".into() });
            }
            if err <= 1.0 {
                t = if last { t1 } else { t + h };
                *y = y_new;
                k1 = k7;
                self.steps += 1;
                let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last {
                    self.h = h;
                }
                h *= grow;
                if last {
                    self.h = self.h.max(h.min(self.h * 5.0));
                    return Ok(());
                }
            } else {
                h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                if h < min_step {
                    return Err(Error::IntegrationFailure {
                        time: t,
                        step: h,
                        reason: format!("step size underflow (error ratio {err:.3e})"),
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_phase_is_accurate() {
        // x'' = -w^2 x packed into (x, x'/w, unused)
        let w = 7.0;
        let f = |_t: f64, y: &State| [w * y[1], -w * y[0], 0.0];
        let mut y = [1.0, 0.0, 0.0];
        let mut st = Stepper::new(1e-10, 1e-10, 1e-3);
        st.advance(&f, 0.0, 3.0, &mut y).unwrap();
        assert!((y[0] - (w * 3.0).cos()).abs() < 1e-8);
        assert!((y[1] + (w * 3.0).sin()).abs() < 1e-8);
    }

    #[test]
    fn exponential_decay_over_many_segments() {
        let f = |_t: f64, y: &State| [-2.0 * y[0], 0.0, 0.0];
        let mut y = [1.0, 0.0, 0.0];
        let mut st = Stepper::new(1e-10, 1e-12, 0.1);
        for k in 0..100 {
            st.advance(&f, k as f64 * 0.05, (k + 1) as f64 * 0.05, &mut y).unwrap();
        }
        assert!((y[0] - (-10.0f64).exp()).abs() < 1e-12);
    }
}
