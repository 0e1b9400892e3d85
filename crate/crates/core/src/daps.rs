//! Virtual detuning-axis pulsed spectroscopy.
//!
//! A sweep plays a trapezoidal detuning pulse of amplitude `A` (rad/ns) and
//! plateau time `T` through a distortion channel and records the final
//! excited population `w` for every `(T, A)` cell. Fitting each plateau-time
//! row with a Lorentzian locates the amplitude `eps_max(T)` at which the
//! distorted pulse just reaches resonance, and `eps0 / eps_max(T)` is the
//! channel's step response.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{crossing_exponent, integrate_lindblad, rate_model_w, BlochState, RateModel, TwoLevelParams};
use crate::error::{invalid, Error, Result};
use crate::fit::{curve_fit, DoubleLorentzian, FitResult, LmOptions, Lorentzian};
use crate::io::{read_matrix_csv, write_matrix_csv, write_track_csv};
use crate::waveform::{apply_channel, synth_square, DistortionChannel, PulseSpec, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Full Bloch-equation integration.
    Ode,
    /// Steady-state rate integrated along the distorted pulse.
    Integral,
    /// Landau-Zener-like transfer at each resonance crossing.
    Delta,
}

/// One two-level system contributing `weight * w` to the signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedParams {
    pub params: TwoLevelParams,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl From<TwoLevelParams> for WeightedParams {
    fn from(params: TwoLevelParams) -> Self {
        Self { params, weight: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepOptions {
    /// ns
    pub sample_period: f64,
    /// ns, both edges
    pub ramp_time: f64,
    /// ns of idle before the pulse
    pub pre_pad: f64,
    /// ns of idle after the pulse, covering the channel's tail
    pub post_pad: f64,
    pub rel_tol: f64,
    /// Seed for the measurement noise.
    pub seed: u64,
    /// Subtract each row's value at zero amplitude.
    pub baseline_subtract: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { sample_period: 0.02, ramp_time: 1.0, pre_pad: 1.0, post_pad: 2.0, rel_tol: 1e-7, seed: 0, baseline_subtract: false }
    }
}

impl SweepOptions {
    /// Unit-amplitude pulse with plateau `plateau` after the channel.
    pub fn distorted_unit_pulse(&self, channel: &DistortionChannel, plateau: f64) -> Result<Waveform> {
        let spec = PulseSpec::new(1.0, self.ramp_time, plateau).with_pads(self.pre_pad, self.post_pad);
        apply_channel(channel, &synth_square(&spec, self.sample_period)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DapsMeta {
    pub channel: DistortionChannel,
    pub channel_description: String,
    pub params: Vec<WeightedParams>,
    pub mode: SweepMode,
    pub noise_sigma: f64,
    pub options: SweepOptions,
}

/// Signal `w` on a plateau-time by amplitude grid; `signal[i][j]` belongs to
/// `times[i]` and `amplitudes[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DapsMap {
    /// Pulse amplitudes, rad/ns.
    pub amplitudes: Vec<f64>,
    /// Plateau times, ns.
    pub times: Vec<f64>,
    pub signal: Vec<Vec<f64>>,
    pub meta: DapsMeta,
}

fn check_grid(name: &str, g: &[f64]) -> Result<()> {
    if g.is_empty() {
        return invalid(format!("{name} grid is empty"));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return invalid(format!("{name} grid has non-finite entries"));
    }
    if g.windows(2).any(|w| w[1] <= w[0]) {
        return invalid(format!("{name} grid must be strictly increasing"));
    }
    Ok(())
}

impl DapsMap {
    pub fn validate(&self) -> Result<()> {
        check_grid("amplitude", &self.amplitudes)?;
        check_grid("time", &self.times)?;
        if self.signal.len() != self.times.len() || self.signal.iter().any(|r| r.len() != self.amplitudes.len()) {
            return invalid("signal shape does not match the grids");
        }
        if self.signal.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("signal has non-finite entries");
        }
        Ok(())
    }

    /// True when every entry lies in `[-0.05, 1.05]`.
    pub fn signal_in_range(&self) -> bool {
        self.signal.iter().flatten().all(|v| (-0.05..=1.05).contains(v))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.signal[i]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv("t_ns", &self.times, &self.amplitudes, &self.signal, out)
    }

    pub fn write_meta_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.meta)?;
        Ok(())
    }

    pub fn read<R1: Read, R2: Read>(csv: R1, meta_json: R2) -> Result<Self> {
        let m = read_matrix_csv(csv)?;
        let meta: DapsMeta = serde_json::from_reader(meta_json)?;
        let map = Self { amplitudes: m.col_axis, times: m.row_axis, signal: m.rows, meta };
        map.validate()?;
        Ok(map)
    }

    /// Cell-wise mean of repeated sweeps over the same grid. The recorded
    /// noise level drops by `sqrt(N)`.
    pub fn average(maps: &[DapsMap]) -> Result<DapsMap> {
        let Some(first) = maps.first() else {
            return invalid("nothing to average");
        };
        if maps.iter().any(|m| m.amplitudes != first.amplitudes || m.times != first.times) {
            return invalid("averaged maps must share their grids");
        }
        let n = maps.len() as f64;
        let mut out = first.clone();
        for (i, row) in out.signal.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = maps.iter().map(|m| m.signal[i][j]).sum::<f64>() / n;
            }
        }
        out.meta.noise_sigma /= n.sqrt();
        Ok(out)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut csv = Vec::new();
        self.write_csv(&mut csv)?;
        std::fs::write(dir.join(format!("{stem}.csv")), csv)?;
        let mut json = Vec::new();
        self.write_meta_json(&mut json)?;
        json.push(b'\n');
        std::fs::write(dir.join(format!("{stem}.json")), json)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let csv = std::fs::File::open(dir.join(format!("{stem}.csv")))?;
        let json = std::fs::File::open(dir.join(format!("{stem}.json")))?;
        Self::read(csv, json)
    }
}

/// Final population of one system driven by `detuning`.
fn cell_signal(detuning: &Waveform, p: &TwoLevelParams, mode: SweepMode, rel_tol: f64) -> Result<f64> {
    match mode {
        SweepMode::Ode => {
            let init = BlochState::ground_state(detuning.samples()[0], p);
            Ok(integrate_lindblad(p, detuning, init, rel_tol)?.final_w)
        }
        SweepMode::Integral => rate_model_w(detuning, p, RateModel::Steady, 0.0),
        SweepMode::Delta => Ok(-(-crossing_exponent(detuning, p)).exp_m1()),
    }
}

/// Runs the sweep over every `(time, amplitude)` cell in parallel.
pub fn run_daps_sweep(
    channel: &DistortionChannel,
    params: &[WeightedParams],
    amplitudes: &[f64],
    times: &[f64],
    mode: SweepMode,
    noise_sigma: f64,
    opts: &SweepOptions,
) -> Result<DapsMap> {
    check_grid("amplitude", amplitudes)?;
    check_grid("time", times)?;
    if params.is_empty() {
        return invalid("at least one parameter set is required");
    }
    for wp in params {
        wp.params.validate()?;
        if !wp.weight.is_finite() {
            return invalid("parameter weights must be finite");
        }
    }
    if times.iter().any(|t| *t < 0.0) {
        return invalid("plateau times must be non-negative");
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return invalid(format!("noise sigma must be non-negative, got {noise_sigma}"));
    }
    let zero_col = if opts.baseline_subtract {
        match amplitudes.iter().position(|a| *a == 0.0) {
            Some(j) => Some(j),
            None => return invalid("baseline subtraction needs a zero amplitude in the grid"),
        }
    } else {
        None
    };

    let pulses: Vec<Waveform> = times.iter().map(|&t| opts.distorted_unit_pulse(channel, t)).collect::<Result<_>>()?;
    let na = amplitudes.len();
    let flat: Vec<f64> = (0..times.len() * na)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / na, idx % na);
            let det = pulses[i].scaled(amplitudes[j])?;
            let mut w = 0.0;
            for wp in params {
                w += wp.weight * cell_signal(&det, &wp.params, mode, opts.rel_tol)?;
            }
            Ok(w)
        })
        .collect::<Vec<Result<f64>>>()
        .into_iter()
        .enumerate()
        .map(|(idx, r)| {
            r.map_err(|e| Error::AtGridPoint { time: times[idx / na], amplitude: amplitudes[idx % na], source: Box::new(e) })
        })
        .collect::<Result<_>>()?;

    let mut signal: Vec<Vec<f64>> = flat.chunks(na).map(|c| c.to_vec()).collect();
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for v in signal.iter_mut().flatten() {
            *v += normal.sample(&mut rng);
        }
    }
    if let Some(j) = zero_col {
        for row in &mut signal {
            let b = row[j];
            row.iter_mut().for_each(|v| *v -= b);
        }
    }
    let meta = DapsMeta {
        channel: channel.clone(),
        channel_description: channel.describe(),
        params: params.to_vec(),
        mode,
        noise_sigma,
        options: *opts,
    };
    Ok(DapsMap { amplitudes: amplitudes.to_vec(), times: times.to_vec(), signal, meta })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakSide {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PeakModel {
    Single,
    /// Two peaks; the track follows the designated one.
    Double { designated: PeakSide },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitPeaksOptions {
    pub max_restarts: usize,
    /// Restrict single-peak fits to the initial centre plus or minus this
    /// many initial half-widths. When every windowed attempt fails, one
    /// more fit runs on the full row.
    pub window_hwhm: Option<f64>,
    /// Minimum fitted height in units of its standard error.
    pub min_significance: f64,
    pub lm: LmOptions,
}

impl Default for FitPeaksOptions {
    fn default() -> Self {
        // truncated tails make baseline and width nearly degenerate, which
        // slows convergence well past the generic iteration cap
        Self { max_restarts: 5, window_hwhm: Some(3.0), min_significance: 3.0, lm: LmOptions { max_iter: 1000, ..LmOptions::default() } }
    }
}

/// Fitted peak of one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowPeak {
    pub center: f64,
    pub center_stderr: f64,
    pub height: f64,
    /// Half width at half maximum.
    pub hwhm: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakTrack {
    pub times: Vec<f64>,
    /// `None` where the row had no usable peak.
    pub eps_max: Vec<Option<f64>>,
    pub stderr: Vec<Option<f64>>,
    pub peaks: Vec<Option<RowPeak>>,
    pub model: PeakModel,
}

impl PeakTrack {
    pub fn from_values(times: Vec<f64>, eps_max: Vec<Option<f64>>, stderr: Vec<Option<f64>>) -> Result<Self> {
        check_grid("time", &times)?;
        if eps_max.len() != times.len() || stderr.len() != times.len() {
            return invalid("track columns differ in length");
        }
        if eps_max.iter().flatten().any(|v| !(v.is_finite() && *v > 0.0)) {
            return invalid("defined peak positions must be finite and positive");
        }
        let peaks = vec![None; times.len()];
        Ok(Self { times, eps_max, stderr, peaks, model: PeakModel::Single })
    }

    pub fn defined_count(&self) -> usize {
        self.eps_max.iter().filter(|v| v.is_some()).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows: Vec<_> = (0..self.times.len()).map(|i| (self.times[i], self.eps_max[i], self.stderr[i])).collect();
        write_track_csv(&rows, out)
    }
}

fn median3(ys: &[f64]) -> Vec<f64> {
    let n = ys.len();
    (0..n)
        .map(|i| {
            if i == 0 || i + 1 == n {
                ys[i]
            } else {
                let mut v = [ys[i - 1], ys[i], ys[i + 1]];
                v.sort_by(f64::total_cmp);
                v[1]
            }
        })
        .collect()
}

/// Noise scale from the median absolute first difference.
fn noise_scale(ys: &[f64]) -> f64 {
    let mut d: Vec<f64> = ys.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    d.sort_by(f64::total_cmp);
    d[d.len() / 2] * 1.4826 / 2f64.sqrt()
}

fn local_maxima(m: &[f64]) -> Vec<usize> {
    let n = m.len();
    let mut out: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = i == 0 || m[i] > m[i - 1] || (m[i] == m[i - 1] && (i < 2 || m[i - 1] > m[i - 2]));
            let right = i + 1 == n || m[i] >= m[i + 1];
            left && right
        })
        .collect();
    out.sort_by(|&a, &b| m[b].total_cmp(&m[a]));
    out
}

/// Indices where the smoothed row first drops below half height on either
/// side of `i`.
fn half_height_span(m: &[f64], i: usize, base: f64) -> (usize, usize) {
    let half = base + 0.5 * (m[i] - base);
    let mut l = i;
    while l > 0 && m[l] > half {
        l -= 1;
    }
    let mut r = i;
    while r + 1 < m.len() && m[r] > half {
        r += 1;
    }
    (l, r)
}

fn half_width(xs: &[f64], m: &[f64], i: usize, base: f64) -> f64 {
    let (l, r) = half_height_span(m, i, base);
    let spacing = (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64;
    (0.5 * (xs[r] - xs[l])).max(spacing)
}

fn jitter(k: usize) -> (f64, f64) {
    // deterministic restart offsets: centre shift in half-widths, width factor
    const SEQ: [(f64, f64); 5] = [(0.5, 1.0), (-0.5, 1.0), (0.0, 0.5), (0.0, 2.0), (1.0, 1.5)];
    SEQ[k % SEQ.len()]
}

fn accept(fit: &FitResult, x_lo: f64, x_hi: f64, centers: &[usize], heights: &[usize], widths: &[usize], sig: f64) -> bool {
    if !fit.converged {
        return false;
    }
    let Some(se) = &fit.stderr else { return false };
    for (&c, (&h, &w)) in centers.iter().zip(heights.iter().zip(widths)) {
        let (x0, a, g) = (fit.params[c], fit.params[h], fit.params[w]);
        if !(x0 >= x_lo && x0 <= x_hi) || !(a > 0.0) || g == 0.0 || !x0.is_finite() {
            return false;
        }
        if !(a >= sig * se[h]) || !se[c].is_finite() {
            return false;
        }
    }
    true
}

/// Fits one Lorentzian plus baseline to a row.
pub fn fit_single_peak(xs: &[f64], ys: &[f64], opts: &FitPeaksOptions) -> Option<RowPeak> {
    if xs.len() < 8 || xs.len() != ys.len() {
        return None;
    }
    let m = median3(ys);
    let i = *local_maxima(&m).first()?;
    let mut sorted = m.clone();
    sorted.sort_by(f64::total_cmp);
    let base = sorted[sorted.len() / 10];
    let height = m[i] - base;
    if !(height > 0.0) || height <= 3.0 * noise_scale(ys) {
        return None;
    }
    let g0 = half_width(xs, &m, i, base);
    let (lo, hi) = match opts.window_hwhm {
        Some(k) => {
            // counted in samples so the window does not depend on the
            // amplitude units
            let (l, r) = half_height_span(&m, i, base);
            let reach = (k * ((r - l) as f64 / 2.0).max(1.0)).floor() as usize;
            let mut lo = i.saturating_sub(reach);
            let mut hi = (i + reach + 1).min(xs.len());
            while hi - lo < 8 {
                lo = lo.saturating_sub(1);
                hi = (hi + 1).min(xs.len());
            }
            (lo, hi)
        }
        None => (0, xs.len()),
    };
    let windowed = (0..=opts.max_restarts).map(|attempt| {
        let (shift, scale) = if attempt == 0 { (0.0, 1.0) } else { jitter(attempt - 1) };
        (lo, hi, [height, xs[i] + shift * g0, g0 * scale, base])
    });
    let full_row = (hi - lo < xs.len()).then_some((0, xs.len(), [height, xs[i], g0, base]));
    for (a, b, p0) in windowed.chain(full_row) {
        let Ok(fit) = curve_fit(&Lorentzian, &xs[a..b], &ys[a..b], &p0, opts.lm) else { continue };
        if accept(&fit, xs[0], xs[xs.len() - 1], &[1], &[0], &[2], opts.min_significance) {
            let se = fit.stderr.as_ref().unwrap();
            return Some(RowPeak { center: fit.params[1], center_stderr: se[1], height: fit.params[0], hwhm: fit.params[2].abs(), baseline: fit.params[3] });
        }
    }
    None
}

/// Fits two Lorentzians on a shared baseline and returns them ordered by
/// centre.
pub fn fit_double_peak(xs: &[f64], ys: &[f64], opts: &FitPeaksOptions) -> Option<[RowPeak; 2]> {
    if xs.len() < 8 || xs.len() != ys.len() {
        return None;
    }
    let m = median3(ys);
    let maxima = local_maxima(&m);
    let mut sorted = m.clone();
    sorted.sort_by(f64::total_cmp);
    let base = sorted[sorted.len() / 10];
    let i1 = *maxima.first()?;
    let g1 = half_width(xs, &m, i1, base);
    // second peak: next local maximum outside the first one's half width
    let i2 = maxima.iter().copied().skip(1).find(|&k| (xs[k] - xs[i1]).abs() > g1).or_else(|| maxima.get(1).copied())?;
    let g2 = half_width(xs, &m, i2, base);
    let (h1, h2) = (m[i1] - base, m[i2] - base);
    if !(h1 > 3.0 * noise_scale(ys)) || !(h2 > 0.0) {
        return None;
    }
    for attempt in 0..=opts.max_restarts {
        let (shift, scale) = if attempt == 0 { (0.0, 1.0) } else { jitter(attempt - 1) };
        let p0 = [h1, xs[i1] + shift * g1, g1 * scale, h2, xs[i2] - shift * g2, g2 * scale, base];
        let Ok(fit) = curve_fit(&DoubleLorentzian, xs, ys, &p0, opts.lm) else { continue };
        if accept(&fit, xs[0], xs[xs.len() - 1], &[1, 4], &[0, 3], &[2, 5], opts.min_significance) {
            let se = fit.stderr.as_ref().unwrap();
            let p = &fit.params;
            let a = RowPeak { center: p[1], center_stderr: se[1], height: p[0], hwhm: p[2].abs(), baseline: p[6] };
            let b = RowPeak { center: p[4], center_stderr: se[4], height: p[3], hwhm: p[5].abs(), baseline: p[6] };
            return Some(if a.center <= b.center { [a, b] } else { [b, a] });
        }
    }
    None
}

pub fn fit_peaks(map: &DapsMap, model: PeakModel) -> Result<PeakTrack> {
    fit_peaks_with(map, model, &FitPeaksOptions::default())
}

/// Fits every plateau-time row; rows without an acceptable fit are left
/// undefined.
pub fn fit_peaks_with(map: &DapsMap, model: PeakModel, opts: &FitPeaksOptions) -> Result<PeakTrack> {
    map.validate()?;
    if map.amplitudes.len() < 8 {
        return invalid(format!("peak fitting needs at least 8 amplitudes per row, got {}", map.amplitudes.len()));
    }
    let peaks: Vec<Option<RowPeak>> = map
        .signal
        .par_iter()
        .map(|row| match model {
            PeakModel::Single => fit_single_peak(&map.amplitudes, row, opts),
            PeakModel::Double { designated } => fit_double_peak(&map.amplitudes, row, opts).map(|pair| match designated {
                PeakSide::Left => pair[0],
                PeakSide::Right => pair[1],
            }),
        })
        .collect();
    let peaks: Vec<Option<RowPeak>> = peaks.into_iter().map(|p| p.filter(|p| p.center > 0.0)).collect();
    Ok(PeakTrack {
        times: map.times.clone(),
        eps_max: peaks.iter().map(|p| p.map(|p| p.center)).collect(),
        stderr: peaks.iter().map(|p| p.map(|p| p.center_stderr)).collect(),
        peaks,
        model,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResponseEstimate {
    pub times: Vec<f64>,
    pub s: Vec<Option<f64>>,
    pub stderr: Vec<Option<f64>>,
    pub ref_time: f64,
    pub eps0_est: f64,
    pub eps0_stderr: f64,
    /// Times where `s` decreases relative to the previous defined point.
    pub non_monotone_at: Vec<f64>,
}

impl StepResponseEstimate {
    pub fn is_monotone(&self) -> bool {
        self.non_monotone_at.is_empty()
    }

    /// The estimate as a uniformly sampled waveform. Fails if the time grid
    /// is not uniform or any point is undefined.
    pub fn waveform(&self) -> Result<Waveform> {
        let (t0, ts) = crate::io::uniform_grid(&self.times)?;
        let vals: Option<Vec<f64>> = self.s.iter().copied().collect();
        let Some(vals) = vals else {
            let t = self.times[self.s.iter().position(|v| v.is_none()).unwrap()];
            return invalid(format!("step response is undefined at t = {t} ns"));
        };
        Waveform::new(vals, ts, t0)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows: Vec<_> = (0..self.times.len()).map(|i| (self.times[i], self.s[i], self.stderr[i])).collect();
        write_track_csv(&rows, out)
    }
}

/// `eps_max` at `t`, interpolating linearly between defined neighbours.
fn track_value_at(track: &PeakTrack, t: f64) -> Option<(f64, f64)> {
    let ts = &track.times;
    if let Some(i) = ts.iter().position(|&x| x == t) {
        return track.eps_max[i].map(|v| (v, track.stderr[i].unwrap_or(0.0)));
    }
    let k = ts.partition_point(|&x| x < t);
    if k == 0 || k == ts.len() {
        return None;
    }
    let (a, b) = (track.eps_max[k - 1]?, track.eps_max[k]?);
    let (sa, sb) = (track.stderr[k - 1].unwrap_or(0.0), track.stderr[k].unwrap_or(0.0));
    let f = (t - ts[k - 1]) / (ts[k] - ts[k - 1]);
    Some((a + f * (b - a), ((1.0 - f) * sa).hypot(f * sb)))
}

/// `s(t) = eps_max(ref_time) / eps_max(t)`.
pub fn reconstruct_step(track: &PeakTrack, ref_time: f64) -> Result<StepResponseEstimate> {
    let Some((eps0, eps0_se)) = track_value_at(track, ref_time) else {
        return invalid(format!("peak track is undefined near the reference time {ref_time} ns"));
    };
    let n = track.times.len();
    let mut s = vec![None; n];
    let mut stderr = vec![None; n];
    for i in 0..n {
        if let Some(e) = track.eps_max[i] {
            let v = eps0 / e;
            s[i] = Some(v);
            let rel = if track.times[i] == ref_time {
                0.0
            } else {
                (track.stderr[i].unwrap_or(0.0) / e).hypot(eps0_se / eps0)
            };
            stderr[i] = Some(v * rel);
        }
    }
    let mut non_monotone_at = Vec::new();
    let mut prev: Option<f64> = None;
    for i in 0..n {
        if let Some(v) = s[i] {
            if prev.is_some_and(|p| v < p) {
                non_monotone_at.push(track.times[i]);
            }
            prev = Some(v);
        }
    }
    Ok(StepResponseEstimate { times: track.times.clone(), s, stderr, ref_time, eps0_est: eps0, eps0_stderr: eps0_se, non_monotone_at })
}

/// Peak height over full width at half maximum of a single-peak fit.
pub fn visibility(amplitudes: &[f64], row: &[f64]) -> Option<f64> {
    let p = fit_single_peak(amplitudes, row, &FitPeaksOptions::default())?;
    visibility_of(&p)
}

pub fn visibility_of(p: &RowPeak) -> Option<f64> {
    (p.hwhm > 0.0).then(|| p.height / (2.0 * p.hwhm))
}

/// Plateau time of highest peak visibility, `pi^2 kappa / (4 t_c^3)`, with
/// rates in rad/ns.
pub fn optimal_plateau_estimate(params: &TwoLevelParams) -> f64 {
    PI * PI * params.kappa / (4.0 * params.t_c.powi(3))
}

/// Amplitude whose distorted pulse peak just reaches `eps0`.
pub fn critical_amplitude(channel: &DistortionChannel, params: &TwoLevelParams, plateau: f64, opts: &SweepOptions) -> Result<f64> {
    let p = opts.distorted_unit_pulse(channel, plateau)?;
    let peak = p.samples().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return invalid("distorted pulse never rises above zero");
    }
    Ok(params.eps0 / peak)
}

/// Offset between the amplitude of largest signal and the critical
/// amplitude, for a map holding a single plateau time.
pub fn overshoot_factor(map: &DapsMap, channel: &DistortionChannel, params: &TwoLevelParams) -> Result<f64> {
    map.validate()?;
    if map.times.len() != 1 {
        return invalid(format!("overshoot factor needs a single plateau time, map has {}", map.times.len()));
    }
    let xs = &map.amplitudes;
    let row = &map.signal[0];
    let crit = critical_amplitude(channel, params, map.times[0], &map.meta.options)?;
    if crit < xs[0] || crit > xs[xs.len() - 1] {
        return invalid(format!("critical amplitude {crit} lies outside the amplitude grid"));
    }
    let i = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
    let mut peak = xs[i];
    if i > 0 && i + 1 < xs.len() {
        // vertex of the parabola through the three points around the maximum
        let (x0, x1, x2) = (xs[i - 1], xs[i], xs[i + 1]);
        let (y0, y1, y2) = (row[i - 1], row[i], row[i + 1]);
        let den = (x0 - x1) * (x0 - x2) * (x1 - x2);
        let a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den;
        let b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / den;
        if a < 0.0 {
            peak = (-b / (2.0 * a)).clamp(x0, x2);
        }
    }
    Ok(peak - crit)
}
