//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report always prints. Criteria in
//! `KNOWN_FAILURES` are reported but do not fail the run; any other failing
//! criterion exits nonzero.

use std::process::ExitCode;
use std::time::Instant;

use cryoscope::chirp::{
    analyze_chirp, angle_grid, reference_trace, sliding_window_fit, window_slope, ChirpSignalParams, StftOptions, WindowFn,
};
use cryoscope::daps::{
    critical_amplitude, fit_peaks, optimal_plateau_estimate, overshoot_factor, reconstruct_step, run_daps_sweep, visibility,
    PeakModel, SweepMode, SweepOptions,
};
use cryoscope::dynamics::{gamma_first_order, integrate_lindblad, BlochState, TwoLevelParams};
use cryoscope::filterdesign::{invert_to_fir, invert_to_fir_with, InversionMethod, InversionOptions};
use cryoscope::noise::{coherence_chi0, fit_kappa, fit_kappa_curve, NoiseSpec};
use cryoscope::waveform::{apply_channel, convolve, impulse_from_step, synth_square, DistortionChannel, PulseSpec, Waveform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria expected to fail, with the reason. See the README.
const KNOWN_FAILURES: &[(u32, &str)] = &[
    (1, "the closed-form first-order rate drops the derivative of 1/D, so its sweep-rate term has the wrong size and sign far from resonance"),
    (2, "the ridge sits above the critical amplitude while the response still rises, biasing s(t) low by up to 0.17 at 2-5 ns"),
    (5, "the simulated visibility maximum scales close to t_c^-1.4, so the t_c^-3 rule misses by more than 2x at 0.3 and 0.4 GHz"),
    (6, "the 25 ns window cannot separate the two tones 24 MHz apart, and their beating tilts the unchirped ridge to 94 deg"),
    (8, "three invariants hold only on a restricted domain; the full statements have counterexamples"),
];

const CRIT1_REL_TOL: f64 = 0.10;
const CRIT2_STEP_TOL: f64 = 0.05;
const CRIT2_RIPPLE_TOL: f64 = 0.01;
const CRIT3_RESIDUAL_TOL: f64 = 1e-9;
const CRIT5_FACTOR: f64 = 2.0;
const CRIT6_SEPARATION_DEG: f64 = 5.0;
const CRIT6_SLOPE_REL_TOL: f64 = 0.20;
const CRIT7_KAPPA_REL_TOL: f64 = 1e-6;
const CRIT8_CASES: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn reference_params() -> TwoLevelParams {
    TwoLevelParams::from_ghz(20.0, 0.3, 2.0).unwrap()
}

/// First-order adiabatic elimination carried out with the full time
/// derivative of the zeroth-order coherence, including `d(1/D)/dt`.
fn consistent_first_order_rate(delta: f64, delta_dot: f64, p: &TwoLevelParams) -> f64 {
    let (k, tc2) = (p.kappa, p.t_c * p.t_c);
    let d = delta * delta + k * k;
    let num = k * d * d + delta * delta_dot * (3.0 * k * k - delta * delta);
    tc2 * num / (d * (d * d - tc2 * (k * k - delta * delta)))
}

/// Bloch-equation rate against the first-order asymptotic rate on the
/// distorted critical-amplitude pulse.
fn criterion_1() -> Outcome {
    let p = reference_params();
    let chan = DistortionChannel::one_pole(1.0);
    let ts = 0.005;
    let spec = PulseSpec::new(1.0, 1.0, 3.0).with_pads(1.0, 0.0);
    let unit = apply_channel(&chan, &synth_square(&spec, ts).unwrap()).unwrap();
    let crit = p.eps0 / unit.samples().iter().cloned().fold(f64::MIN, f64::max);
    let det = unit.scaled(crit).unwrap();
    let init = BlochState::ground_state(det.samples()[0], &p);
    let r = integrate_lindblad(&p, &det, init, 1e-10).unwrap();
    let (start, end) = spec.plateau_window();
    let d = det.samples();
    let mut worst: f64 = 0.0;
    let mut worst_consistent: f64 = 0.0;
    let mut count = 0;
    for k in 1..d.len() - 1 {
        let t = r.times[k];
        if t < start + 3.0 / p.kappa || t > end {
            continue;
        }
        let eps_dot = (d[k + 1] - d[k - 1]) / (2.0 * ts);
        let g = gamma_first_order(d[k], eps_dot, &p).unwrap();
        let num = r.states[k].relaxation_rate(&p);
        worst = worst.max(((num - g) / g).abs());
        let c = consistent_first_order_rate(d[k] - p.eps0, eps_dot, &p);
        worst_consistent = worst_consistent.max(((num - c) / c).abs());
        count += 1;
    }
    Outcome {
        pass: count > 0 && worst <= CRIT1_REL_TOL,
        detail: format!(
            "max relative rate error {worst:.4} over {count} plateau samples (tol {CRIT1_REL_TOL}); \
             consistent first-order expansion for reference: {worst_consistent:.4}"
        ),
    }
}

/// One-pole channel through an ODE sweep, peak fit, reconstruction and FIR
/// inversion.
fn criterion_2() -> Outcome {
    let p = reference_params();
    let tau = 1.0;
    let chan = DistortionChannel::one_pole(tau);
    let opts = SweepOptions { sample_period: 1.0, ramp_time: 0.0, pre_pad: 2.0, post_pad: 5.0, seed: 1, ..Default::default() };
    let amps: Vec<f64> = (0..61).map(|i| p.eps0 * (0.7 + 0.02 * i as f64)).collect();
    let times: Vec<f64> = (1..=20).map(f64::from).collect();
    let map = run_daps_sweep(&chan, &[p.into()], &amps, &times, SweepMode::Ode, 0.01, &opts).unwrap();
    let track = fit_peaks(&map, PeakModel::Single).unwrap();
    let est = reconstruct_step(&track, 20.0).unwrap();
    // the discretized one-pole step response, normalized at the reference time
    let s_true = |t: f64| (1.0 - (-t / tau).exp()) / (1.0 - (-20.0 / tau).exp());
    let mut worst: f64 = 0.0;
    let mut undefined = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        match est.s[i] {
            Some(s) if t >= 2.0 => worst = worst.max((s - s_true(t)).abs()),
            None => undefined.push(t),
            _ => {}
        }
    }
    let step_ok = undefined.is_empty() && worst <= CRIT2_STEP_TOL;

    let ripple = (|| {
        let step = est.waveform().ok()?;
        let taps = Waveform::new(impulse_from_step(&step).ok()?.samples().to_vec(), 1.0, 0.0).ok()?;
        let opts = InversionOptions { method: InversionMethod::Exact, noise_floor: Some(1e-3) };
        let fir = invert_to_fir_with(&taps, 20, opts).ok()?.coefficients;
        let x: Vec<f64> = convolve(&vec![1.0; 40], &fir.b).into_iter().take(40).collect();
        let y = apply_channel(&chan, &Waveform::new(x, 1.0, 0.0).ok()?).ok()?;
        Some(y.samples().iter().skip(1).fold(0.0f64, |m, v| m.max((v - 1.0).abs())))
    })();
    let ripple_ok = ripple.is_some_and(|r| r <= CRIT2_RIPPLE_TOL);
    Outcome {
        pass: step_ok && ripple_ok,
        detail: format!(
            "max |s_est - s_true| for t >= 2 ns = {worst:.4} (tol {CRIT2_STEP_TOL}), undefined at {undefined:?}; \
             closed-loop ripple after first sample = {} (tol {CRIT2_RIPPLE_TOL})",
            ripple.map_or("n/a".to_string(), |r| format!("{r:.4}"))
        ),
    }
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    for (tau, ts) in [(1.0f64, 1.0f64), (1.0, 0.1), (0.3, 0.05), (5.0, 1.0)] {
        let a = (-ts / tau).exp();
        let h = Waveform::new((0..400).map(|k| (1.0 - a) * a.powi(k)).collect(), ts, 0.0).unwrap();
        for fir_len in [1, 2, 20, 100] {
            let d = invert_to_fir(&h, fir_len).unwrap();
            worst = worst.max(d.max_leading_residual());
        }
    }
    Outcome { pass: worst <= CRIT3_RESIDUAL_TOL, detail: format!("max leading residual {worst:.3e} (tol {CRIT3_RESIDUAL_TOL:e})") }
}

fn criterion_4() -> Outcome {
    let p = reference_params();
    let chan = DistortionChannel::one_pole(1.0);
    let opts = SweepOptions { sample_period: 0.02, ramp_time: 1.0, pre_pad: 1.0, post_pad: 3.0, ..Default::default() };
    let mut ds = Vec::new();
    for plateau in [3.0, 5.0, 8.0, 10.0] {
        let crit = critical_amplitude(&chan, &p, plateau, &opts).unwrap();
        let amps: Vec<f64> = (0..161).map(|i| crit * (0.9 + 0.0025 * i as f64)).collect();
        let m = run_daps_sweep(&chan, &[p.into()], &amps, &[plateau], SweepMode::Ode, 0.0, &opts).unwrap();
        ds.push(overshoot_factor(&m, &chan, &p).unwrap() / p.eps0);
    }
    let pass = ds[0] > 0.0 && ds.windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = ds.iter().map(|d| format!("{d:.4}")).collect();
    Outcome { pass, detail: format!("d/eps0 at plateaus 3, 5, 8, 10 ns = [{}]", shown.join(", ")) }
}

fn criterion_5() -> Outcome {
    let chan = DistortionChannel::one_pole(1.0);
    let opts = SweepOptions { sample_period: 0.02, ramp_time: 1.0, pre_pad: 1.0, post_pad: 3.0, ..Default::default() };
    let plateaus: Vec<f64> = (0..=38).map(|i| 0.5 * 1.12f64.powi(i)).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for tc in [0.2, 0.3, 0.4] {
        let p = TwoLevelParams::from_ghz(20.0, tc, 2.0).unwrap();
        let mut best: Option<(f64, f64)> = None;
        for &t in &plateaus {
            let crit = critical_amplitude(&chan, &p, t, &opts).unwrap();
            let amps: Vec<f64> = (0..161).map(|i| crit * (0.2 + 0.01 * i as f64)).collect();
            let m = run_daps_sweep(&chan, &[p.into()], &amps, &[t], SweepMode::Ode, 0.0, &opts).unwrap();
            if let Some(v) = visibility(&amps, &m.signal[0]).filter(|v| v.is_finite()) {
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((t, v));
                }
            }
        }
        let estimate = optimal_plateau_estimate(&p);
        let Some((t_best, _)) = best else {
            pass = false;
            parts.push(format!("t_c {tc} GHz: no visibility"));
            continue;
        };
        let ratio = t_best / estimate;
        let ok = (1.0 / CRIT5_FACTOR..=CRIT5_FACTOR).contains(&ratio);
        pass &= ok;
        parts.push(format!(
            "t_c {tc} GHz: argmax {t_best:.2} ns vs {estimate:.2} ns (ratio {ratio:.2}) {}",
            if ok { "ok" } else { "out" }
        ));
    }
    Outcome { pass, detail: format!("{} (factor {CRIT5_FACTOR})", parts.join("; ")) }
}

fn criterion_6() -> Outcome {
    let angles = angle_grid(1.0).unwrap();
    let step = angles[1] - angles[0];
    let chirped = reference_trace(&ChirpSignalParams::reference_chirped()).unwrap();
    let flat = reference_trace(&ChirpSignalParams::reference_unchirped()).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for wf in [WindowFn::Hann, WindowFn::Gauss] {
        let opts = StftOptions { window_fn: wf, ..Default::default() };
        let a = analyze_chirp(&chirped, &opts, &angles).unwrap().peak_angle;
        let b = analyze_chirp(&flat, &opts, &angles).unwrap().peak_angle;
        let separated = a <= b - CRIT6_SEPARATION_DEG;
        let at_90 = (b - 90.0).abs() <= step;
        pass &= separated && at_90;
        parts.push(format!(
            "{wf:?}: chirped {a} deg, unchirped {b} deg (separation {}, unchirped at 90 {})",
            if separated { "ok" } else { "out" },
            if at_90 { "ok" } else { "out" }
        ));
    }
    let p = ChirpSignalParams::reference_chirped();
    let fits = sliding_window_fit(&chirped, 10.0, 1.0).unwrap();
    let slope = window_slope(&fits).map(|s| s.0);
    let expected = p.chirp_rate();
    let slope_ok = slope.is_some_and(|s| (s / expected - 1.0).abs() <= CRIT6_SLOPE_REL_TOL);
    pass &= slope_ok;
    parts.push(format!(
        "sliding-fit slope {} MHz/ns vs {expected:.4} (tol {CRIT6_SLOPE_REL_TOL})",
        slope.map_or("n/a".to_string(), |s| format!("{s:.4}"))
    ));
    Outcome { pass, detail: parts.join("; ") }
}

fn criterion_7() -> Outcome {
    let tc = cryoscope::units::ghz_to_rad_per_ns(0.2);
    let spec = NoiseSpec::new(1.0).unwrap();
    let grid: Vec<f64> = (0..=300).map(|i| i as f64 * 0.01).collect();

    let at_crossing = coherence_chi0(&grid, 0.0, tc, &spec).unwrap();
    let unity = at_crossing.coherence.iter().all(|&c| c == 1.0);

    let times: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
    let mut worst_rel: f64 = 0.0;
    for k0 in [0.01, 0.1, 1.0, 5.0] {
        let c: Vec<f64> = times.iter().map(|t| (-k0 * t * t).exp()).collect();
        let k = fit_kappa(&times, &c).unwrap().kappa().unwrap();
        worst_rel = worst_rel.max((k / k0 - 1.0).abs());
    }
    let recovered = worst_rel <= CRIT7_KAPPA_REL_TOL;

    let eps_ghz = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0];
    let ks: Vec<f64> = eps_ghz
        .iter()
        .map(|&g| {
            let c = coherence_chi0(&grid, cryoscope::units::ghz_to_rad_per_ns(g), tc, &spec).unwrap();
            fit_kappa_curve(&c).unwrap().kappa().unwrap()
        })
        .collect();
    let nondecreasing = ks.windows(2).all(|w| w[1] >= w[0]);
    let (early, late) = (ks[1] / ks[0], ks[5] / ks[4]);
    // saturation: the last doubling changes kappa by under 5% and by less
    // than the first doubling did
    let saturating = late < 1.05 && early > late;
    let shown: Vec<String> = ks.iter().map(|k| format!("{k:.4}")).collect();
    Outcome {
        pass: unity && recovered && nondecreasing && saturating,
        detail: format!(
            "coherence at crossing == 1: {unity}; worst kappa recovery error {worst_rel:.1e} (tol {CRIT7_KAPPA_REL_TOL:e}); \
             kappa(eps) at {eps_ghz:?} GHz = [{}] ns^-2, nondecreasing {nondecreasing}, saturating {saturating}",
            shown.join(", ")
        ),
    }
}

/// Full-domain statements of invariants whose unit proptests run on a
/// restricted domain. Returns the number of violating cases.
fn full_scope_w_range(rng: &mut ChaCha8Rng) -> usize {
    (0..CRIT8_CASES)
        .filter(|_| {
            let tc = rng.random_range(0.0..5.0);
            let kappa = rng.random_range(0.5..20.0);
            let p = TwoLevelParams::new(100.0, tc, kappa).unwrap();
            let n = rng.random_range(2..12);
            let amps: Vec<f64> = (0..n).map(|_| rng.random_range(-400.0..400.0)).collect();
            let det = Waveform::new(amps, 0.2, 0.0).unwrap();
            let init = BlochState::ground_state(det.samples()[0], &p);
            let r = integrate_lindblad(&p, &det, init, 1e-7).unwrap();
            r.states.iter().any(|s| s.w < -1e-6 || s.w > 1.0 + 1e-6 || s.u * s.u + s.v * s.v > 1.0 + 1e-9)
        })
        .count()
}

fn full_scope_dc_preservation(rng: &mut ChaCha8Rng) -> usize {
    (0..CRIT8_CASES)
        .filter(|_| {
            // tail mass below one keeps the inverse stable
            let len = rng.random_range(2..30);
            let raw: Vec<f64> = (1..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mass: f64 = raw.iter().map(|v| v.abs()).sum();
            let scale = rng.random_range(0.1..0.9) / mass.max(1e-12);
            let mut h = vec![1.0];
            h.extend(raw.iter().map(|v| v * scale));
            let h = Waveform::new(h, 1.0, 0.0).unwrap();
            let long = invert_to_fir(&h, 4000).unwrap().coefficients.b;
            let total: f64 = long.iter().map(|v| v * v).sum();
            let mut acc = 0.0;
            let fir_len = long.iter().position(|v| {
                acc += v * v;
                acc >= 0.999 * total
            });
            let fir_len = fir_len.unwrap() + 1;
            let b = invert_to_fir(&h, fir_len).unwrap().coefficients.b;
            (b.iter().sum::<f64>() * h.sum() - 1.0).abs() > 1e-6
        })
        .count()
}

fn full_scope_delta_round_trip(rng: &mut ChaCha8Rng) -> usize {
    let p = reference_params();
    let times: Vec<f64> = (1..=20).map(f64::from).collect();
    let amps: Vec<f64> = (0..300).map(|i| p.eps0 * (0.9 + 0.004 * i as f64)).collect();
    let opts = SweepOptions { sample_period: 0.05, ramp_time: 0.0, pre_pad: 1.0, post_pad: 5.0, ..Default::default() };
    (0..CRIT8_CASES)
        .filter(|_| {
            let tau = rng.random_range(0.3..2.0);
            let chan = DistortionChannel::one_pole(tau);
            let m = run_daps_sweep(&chan, &[p.into()], &amps, &times, SweepMode::Delta, 0.0, &opts).unwrap();
            let est = reconstruct_step(&fit_peaks(&m, PeakModel::Single).unwrap(), 20.0).unwrap();
            let s_true = |t: f64| (1.0 - (-t / tau).exp()) / (1.0 - (-20.0 / tau).exp());
            times.iter().enumerate().any(|(i, &t)| match (est.s[i], est.stderr[i]) {
                (Some(s), Some(se)) => (s - s_true(t)).abs() > se,
                _ => false,
            })
        })
        .count()
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let checks = [
        ("w in [0, 1] for any coupling and dephasing", full_scope_w_range(&mut rng)),
        ("DC preserved whenever taps hold 99.9% of the inverse energy", full_scope_dc_preservation(&mut rng)),
        ("delta-mode round trip within fit stderr at every point", full_scope_delta_round_trip(&mut rng)),
    ];
    let pass = checks.iter().all(|(_, n)| *n == 0);
    let parts: Vec<String> = checks.iter().map(|(name, n)| format!("{name}: {n}/{CRIT8_CASES} violations")).collect();
    Outcome {
        pass,
        detail: format!("restricted-domain proptests run in the unit suites; full-domain statements: {}", parts.join("; ")),
    }
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Outcome); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let filter: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut unexpected = Vec::new();
    for (id, run) in criteria {
        if filter.is_some_and(|f| f != id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let known = KNOWN_FAILURES.iter().find(|(k, _)| *k == id);
        let tag = match (o.pass, known) {
            (true, None) => "PASS".to_string(),
            (true, Some(_)) => "PASS (listed as a known failure)".to_string(),
            (false, Some((_, why))) => format!("FAIL (known: {why})"),
            (false, None) => {
                unexpected.push(id);
                "FAIL".to_string()
            }
        };
        println!("criterion {id}: {tag} [{:.1} s] {}", start.elapsed().as_secs_f64(), o.detail);
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
