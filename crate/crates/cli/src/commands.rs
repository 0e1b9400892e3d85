//! One function per CLI verb. Each is a pure function of the config, the
//! input files and the seed; outputs are replaced atomically.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use cryoscope::chirp::{
    analyze_chirp, angle_grid, sliding_window_fit_with, synth_exchange_signal, window_slope, WindowFit,
};
use cryoscope::daps::{fit_peaks, reconstruct_step, run_daps_sweep, DapsMap};
use cryoscope::filterdesign::{adjust_overshoot, invert_to_fir_with, FIRCoefficients, InversionMethod, InversionOptions};
use cryoscope::io::{read_waveform_csv, write_matrix_csv, write_waveform_csv};
use cryoscope::noise::{coherence_chi0, fit_kappa_curve, KappaFit};
use cryoscope::units::ghz_to_rad_per_ns;
use cryoscope::waveform::{apply_channel_with, convolve, impulse_from_step, ApplyOptions, Waveform};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{RunConfig, TraceSource};

/// A loaded config together with where its paths resolve.
pub struct RunContext {
    pub cfg: RunConfig,
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl RunContext {
    pub fn new(cfg: RunConfig, config_path: &Path, out_override: Option<PathBuf>, seed_override: Option<u64>) -> Self {
        let base_dir = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let out_dir = out_override.unwrap_or_else(|| base_dir.join(&cfg.output_dir));
        let mut cfg = cfg;
        if let Some(s) = seed_override {
            cfg.seed = s;
        }
        Self { cfg, base_dir, out_dir }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    fn output(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir).with_context(|| format!("creating {}", self.out_dir.display()))?;
        let path = self.out_dir.join(name);
        write_atomic(&path, bytes)?;
        Ok(path)
    }

    fn output_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.output(name, s.as_bytes())
    }
}

/// Writes to a temporary file in the target directory and renames it over
/// `path`, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> cryoscope::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn simulate_daps(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let Some(sim) = &cfg.simulate else { bail!("config has no `simulate` section") };
    ensure!(!cfg.systems.is_empty(), "config field `systems`: simulate-daps needs at least one system");
    let params = cfg.weighted_params()?;
    let eps0 = params[0].params.eps0;
    let amplitudes: Vec<f64> = sim.amplitudes_rel.points().iter().map(|a| a * eps0).collect();
    let times = sim.plateau_times.points();
    let opts = sim.sweep.options(cfg.seed);
    let map = run_daps_sweep(&cfg.channel, &params, &amplitudes, &times, cfg.mode, sim.noise_sigma, &opts)?;
    let csv = to_bytes(|b| map.write_csv(b))?;
    let mut meta = to_bytes(|b| map.write_meta_json(b))?;
    meta.push(b'\n');
    Ok(vec![ctx.output(&format!("{}.csv", sim.stem), &csv)?, ctx.output(&format!("{}.json", sim.stem), &meta)?])
}

#[derive(Debug, Serialize)]
struct CalibrationReport {
    ref_time: f64,
    eps0_est: f64,
    eps0_stderr: f64,
    defined_points: usize,
    non_monotone_at: Vec<f64>,
    kernel_taps_used: usize,
    max_leading_residual: f64,
    max_tail_residual: f64,
    adjustments: Vec<(usize, f64)>,
}

pub fn calibrate(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let cal = ctx.cfg.calibrate.clone().unwrap_or_default();
    let map_dir = cal.map_dir.as_ref().map_or_else(|| ctx.out_dir.clone(), |d| ctx.resolve(d));
    let map = DapsMap::load(&map_dir, &cal.map_stem).with_context(|| format!("loading map `{}` from {}", cal.map_stem, map_dir.display()))?;
    let track = fit_peaks(&map, cal.peak_model)?;
    let mut written = vec![ctx.output("peak_track.csv", &to_bytes(|b| track.write_csv(b))?)?];

    let ref_time = cal.ref_time.unwrap_or(*map.times.last().unwrap());
    let est = reconstruct_step(&track, ref_time)?;
    written.push(ctx.output("step_response.csv", &to_bytes(|b| est.write_csv(b))?)?);
    let undefined: Vec<String> =
        est.times.iter().zip(&est.s).filter(|(_, s)| s.is_none()).map(|(t, _)| format!("t = {t} ns: no usable peak")).collect();
    if !undefined.is_empty() {
        bail!("step response is undefined at {} plateau time(s):\n  {}", undefined.len(), undefined.join("\n  "));
    }

    // plateau time k * ts is the step response sampled after k samples
    let step = est.waveform()?;
    let ts = step.sample_period();
    ensure!(
        (step.t0() - ts).abs() <= 1e-9 * ts,
        "plateau times must start at one grid spacing ({ts} ns) to form a sampled step response, first is {} ns",
        step.t0()
    );
    let taps = Waveform::new(impulse_from_step(&step)?.samples().iter().map(|h| h * ts).collect(), ts, 0.0)?;
    written.push(ctx.output("impulse.csv", &to_bytes(|b| write_waveform_csv(&taps, b))?)?);

    let opts = InversionOptions { method: InversionMethod::Exact, noise_floor: cal.noise_floor };
    let design = invert_to_fir_with(&taps, cal.fir_len, opts)?;
    let fir = adjust_overshoot(&design.coefficients, &cal.adjustments)?;
    written.push(ctx.output("fir.json", (fir.to_json()? + "\n").as_bytes())?);

    let report = CalibrationReport {
        ref_time,
        eps0_est: est.eps0_est,
        eps0_stderr: est.eps0_stderr,
        defined_points: track.defined_count(),
        non_monotone_at: est.non_monotone_at.clone(),
        kernel_taps_used: design.kernel_taps_used,
        max_leading_residual: design.max_leading_residual(),
        max_tail_residual: design.max_tail_residual(),
        adjustments: fir.adjustments.clone(),
    };
    written.push(ctx.output_json("calibration_report.json", &report)?);
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
pub struct LoopReport {
    pub sample_period: f64,
    pub fir_taps: usize,
    /// Largest `|y - 1|` after the first sample.
    pub max_plateau_ripple: f64,
    /// Time from the step to the first sample after which the response stays
    /// within the tolerance band; `null` if it never does.
    pub settling_time: Option<f64>,
    pub settle_tolerance: f64,
    /// `y[0] - 1`.
    pub overshoot_n0: f64,
}

/// Closed-loop step response of FIR then channel, normalized by the
/// channel's DC gain.
pub fn loop_response(ctx: &RunContext) -> Result<(Waveform, LoopReport)> {
    let Some(v) = &ctx.cfg.verify else { bail!("config has no `verify` section") };
    let fir = match &v.fir {
        Some(p) => {
            let path = ctx.resolve(p);
            Some(FIRCoefficients::read_json(&path).with_context(|| format!("reading FIR {}", path.display()))?)
        }
        None => None,
    };
    let ts = fir.as_ref().map_or_else(|| v.sample_period.unwrap(), |f| f.sample_period);
    let n = (v.duration / ts + 1e-9).floor() as usize + 1;
    let step = vec![1.0; n];
    let mut x = match &fir {
        Some(f) => convolve(&step, &f.b),
        None => step,
    };
    x.truncate(n);
    let channel = &ctx.cfg.channel;
    let y = apply_channel_with(channel, &Waveform::new(x, ts, 0.0)?, ApplyOptions { resample: true })?;
    let gain = channel.dc_gain();
    ensure!(gain.abs() > 1e-12, "channel DC gain vanishes");
    let y = y.resized(n)?.scaled(1.0 / gain)?;

    let ys = y.samples();
    let tol = v.settle_tolerance;
    let max_plateau_ripple = ys.iter().skip(1).fold(0.0f64, |m, s| m.max((s - 1.0).abs()));
    let settling_time = match ys.iter().rposition(|s| (s - 1.0).abs() > tol) {
        None => Some(0.0),
        Some(k) if k + 1 < n => Some((k + 1) as f64 * ts),
        Some(_) => None,
    };
    let report = LoopReport {
        sample_period: ts,
        fir_taps: fir.as_ref().map_or(0, |f| f.len()),
        max_plateau_ripple,
        settling_time,
        settle_tolerance: tol,
        overshoot_n0: ys[0] - 1.0,
    };
    Ok((y, report))
}

pub fn verify_loop(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let (y, report) = loop_response(ctx)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(vec![
        ctx.output("loop_response.csv", &to_bytes(|b| write_waveform_csv(&y, b))?)?,
        ctx.output_json("loop_report.json", &report)?,
    ])
}

fn sliding_csv(fits: &[WindowFit]) -> Vec<u8> {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    let mut s = String::from("t_start_ns,t_center_ns,freq_mhz,freq_stderr_mhz,amplitude,status\n");
    for f in fits {
        let status = serde_json::to_value(f.status).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        s += &format!(
            "{},{},{},{},{},{}\n",
            f.t_start,
            f.t_center,
            opt(f.freq_mhz()),
            opt(f.freq_stderr_mhz()),
            opt(f.amplitude),
            status
        );
    }
    s.into_bytes()
}

pub fn chirp(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let Some(c) = &ctx.cfg.chirp else { bail!("config has no `chirp` section") };
    let (trace, expected_rate) = match &c.trace {
        TraceSource::File(p) => {
            let path = ctx.resolve(p);
            let f = std::fs::File::open(&path).with_context(|| format!("opening trace {}", path.display()))?;
            (read_waveform_csv(f).with_context(|| format!("reading trace {}", path.display()))?, None)
        }
        TraceSource::Synth { params, sample_period, duration } => {
            let len = (duration / sample_period).round() as usize + 1;
            let w = synth_exchange_signal(params, len, *sample_period, 0.0)?;
            (w, Some(params.chirp_rate()))
        }
    };
    let analysis = analyze_chirp(&trace, &c.stft, &angle_grid(c.angle_step_deg)?)?;
    let fits = sliding_window_fit_with(&trace, &c.sliding)?;
    let slope = window_slope(&fits);

    let mut written = vec![ctx.output("trace.csv", &to_bytes(|b| write_waveform_csv(&trace, b))?)?];
    written.push(ctx.output("spectrogram.csv", &to_bytes(|b| analysis.spectrogram.write_csv(b))?)?);
    written.push(ctx.output("spectrogram.json", &to_bytes(|b| analysis.spectrogram.write_meta_json(b))?)?);
    written.push(ctx.output("radon.csv", &to_bytes(|b| analysis.radon.write_csv(b))?)?);
    written.push(ctx.output("radon.json", &to_bytes(|b| analysis.radon.write_meta_json(b))?)?);
    written.push(ctx.output("sliding_fit.csv", &sliding_csv(&fits))?);
    let summary = json!({
        "peak_angle_deg": analysis.peak_angle,
        "angle_step_deg": c.angle_step_deg,
        "freq_slope_mhz_per_ns": slope.map(|s| s.0),
        "freq_slope_stderr": slope.map(|s| s.1),
        "expected_chirp_rate_mhz_per_ns": expected_rate,
        "windows": fits.len(),
        "windows_fitted": fits.iter().filter(|f| f.omega.is_some()).count(),
    });
    written.push(ctx.output_json("peak_angle.json", &summary)?);
    Ok(written)
}

pub fn noise_kappa(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let Some(n) = &ctx.cfg.noise else { bail!("config has no `noise` section") };
    let t_c = ghz_to_rad_per_ns(n.t_c_ghz);
    let eps_ghz = n.eps_ghz.points();
    let times = n.times.points();
    let results: Vec<(Vec<f64>, KappaFit)> = eps_ghz
        .par_iter()
        .map(|&e| {
            let curve = coherence_chi0(&times, ghz_to_rad_per_ns(e), t_c, &n.spec)?;
            let fit = fit_kappa_curve(&curve)?;
            Ok((curve.coherence, fit))
        })
        .collect::<cryoscope::Result<_>>()?;

    let rows: Vec<Vec<f64>> = results.iter().map(|(c, _)| c.clone()).collect();
    let mut scan = String::from("eps_ghz,kappa_per_ns2,stderr,status\n");
    for (e, (_, fit)) in eps_ghz.iter().zip(&results) {
        match fit {
            KappaFit::Fitted { kappa, stderr } => scan += &format!("{e},{kappa},{stderr},fitted\n"),
            KappaFit::IllPosed => scan += &format!("{e},,,ill_posed\n"),
        }
    }
    let fits: Vec<_> = eps_ghz.iter().zip(&results).map(|(e, (_, f))| json!({"eps_ghz": e, "fit": f})).collect();
    Ok(vec![
        ctx.output("coherence.csv", &to_bytes(|b| write_matrix_csv("eps_ghz", &eps_ghz, &times, &rows, b))?)?,
        ctx.output("kappa_scan.csv", scan.as_bytes())?,
        ctx.output_json("kappa_scan.json", &json!({"t_c_ghz": n.t_c_ghz, "spec": n.spec, "fits": fits}))?,
    ])
}
