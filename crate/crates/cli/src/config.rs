//! Run configuration: a strict JSON schema shared by every command.
//!
//! Two-level parameters are given in cyclic GHz and converted to rad/ns on
//! load. Relative paths inside the file resolve against the file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cryoscope::chirp::{ChirpSignalParams, SlidingFitOptions, StftOptions};
use cryoscope::daps::{PeakModel, SweepMode, SweepOptions, WeightedParams};
use cryoscope::dynamics::TwoLevelParams;
use cryoscope::noise::NoiseSpec;
use cryoscope::waveform::DistortionChannel;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "DistortionChannel::identity")]
    pub channel: DistortionChannel,
    /// Two-level systems whose weighted signals add up.
    #[serde(default)]
    pub systems: Vec<SystemGhz>,
    #[serde(default = "default_mode")]
    pub mode: SweepMode,
    pub simulate: Option<SimulateConfig>,
    pub calibrate: Option<CalibrateConfig>,
    pub verify: Option<VerifyConfig>,
    pub chirp: Option<ChirpConfig>,
    pub noise: Option<NoiseConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_mode() -> SweepMode {
    SweepMode::Ode
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemGhz {
    pub eps0_ghz: f64,
    pub t_c_ghz: f64,
    pub kappa_ghz: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl SystemGhz {
    pub fn params(&self) -> Result<TwoLevelParams> {
        Ok(TwoLevelParams::from_ghz(self.eps0_ghz, self.t_c_ghz, self.kappa_ghz)?)
    }
}

/// A one-dimensional grid, either listed or evenly spaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Grid {
    Values(Vec<f64>),
    Linspace { start: f64, stop: f64, count: usize },
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        match self {
            Grid::Values(v) => v.clone(),
            Grid::Linspace { start, stop, count } => match count {
                0 => Vec::new(),
                1 => vec![*start],
                n => (0..*n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect(),
            },
        }
    }
}

/// Pulse and integration settings of a sweep. The noise seed comes from the
/// run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub sample_period: f64,
    pub ramp_time: f64,
    pub pre_pad: f64,
    pub post_pad: f64,
    pub rel_tol: f64,
    pub baseline_subtract: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let o = SweepOptions::default();
        Self {
            sample_period: o.sample_period,
            ramp_time: o.ramp_time,
            pre_pad: o.pre_pad,
            post_pad: o.post_pad,
            rel_tol: o.rel_tol,
            baseline_subtract: o.baseline_subtract,
        }
    }
}

impl SweepConfig {
    pub fn options(&self, seed: u64) -> SweepOptions {
        SweepOptions {
            sample_period: self.sample_period,
            ramp_time: self.ramp_time,
            pre_pad: self.pre_pad,
            post_pad: self.post_pad,
            rel_tol: self.rel_tol,
            seed,
            baseline_subtract: self.baseline_subtract,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Pulse amplitudes in units of the first system's `eps0`.
    pub amplitudes_rel: Grid,
    /// Plateau times in ns.
    pub plateau_times: Grid,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default = "default_map_stem")]
    pub stem: String,
}

fn default_map_stem() -> String {
    "daps".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    /// Directory holding the map; defaults to the output directory.
    #[serde(default)]
    pub map_dir: Option<PathBuf>,
    #[serde(default = "default_map_stem")]
    pub map_stem: String,
    #[serde(default = "default_peak_model")]
    pub peak_model: PeakModel,
    /// Plateau time taken as fully settled; defaults to the longest one.
    #[serde(default)]
    pub ref_time: Option<f64>,
    #[serde(default = "default_fir_len")]
    pub fir_len: usize,
    /// Relative kernel noise floor; `null` keeps every tap.
    #[serde(default = "default_noise_floor")]
    pub noise_floor: Option<f64>,
    /// `[index, delta]` tap corrections applied after inversion.
    #[serde(default)]
    pub adjustments: Vec<(usize, f64)>,
}

fn default_peak_model() -> PeakModel {
    PeakModel::Single
}

fn default_fir_len() -> usize {
    20
}

fn default_noise_floor() -> Option<f64> {
    Some(1e-3)
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            map_dir: None,
            map_stem: default_map_stem(),
            peak_model: default_peak_model(),
            ref_time: None,
            fir_len: default_fir_len(),
            noise_floor: default_noise_floor(),
            adjustments: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// FIR JSON; without one the loop runs uncorrected.
    #[serde(default)]
    pub fir: Option<PathBuf>,
    /// Sample period of the uncorrected loop, ns. Taken from the FIR when
    /// one is given.
    #[serde(default)]
    pub sample_period: Option<f64>,
    /// Length of the step record, ns.
    #[serde(default = "default_verify_duration")]
    pub duration: f64,
    /// Band around the final value that counts as settled.
    #[serde(default = "default_settle_tol")]
    pub settle_tolerance: f64,
}

fn default_verify_duration() -> f64 {
    20.0
}

fn default_settle_tol() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceSource {
    /// `t_ns,value` CSV file.
    File(PathBuf),
    /// Synthesized exchange signal.
    Synth {
        params: ChirpSignalParams,
        #[serde(default = "default_chirp_period")]
        sample_period: f64,
        #[serde(default = "default_chirp_duration")]
        duration: f64,
    },
}

fn default_chirp_period() -> f64 {
    cryoscope::chirp::REFERENCE_SAMPLE_PERIOD
}

fn default_chirp_duration() -> f64 {
    cryoscope::chirp::REFERENCE_DURATION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChirpConfig {
    pub trace: TraceSource,
    #[serde(default)]
    pub stft: StftOptions,
    #[serde(default = "default_angle_step")]
    pub angle_step_deg: f64,
    #[serde(default)]
    pub sliding: SlidingFitOptions,
}

fn default_angle_step() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub spec: NoiseSpec,
    pub t_c_ghz: f64,
    /// Detunings from the avoided crossing, cyclic GHz.
    pub eps_ghz: Grid,
    /// Evolution times, ns.
    pub times: Grid,
}

impl RunConfig {
    /// Parses and validates a config, reporting the JSON path of any
    /// offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("config field `{path}`: {}", e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("config field `schema_version`: expected {SCHEMA_VERSION}, got {}", self.schema_version);
        }
        for (i, s) in self.systems.iter().enumerate() {
            s.params().with_context(|| format!("config field `systems[{i}]`"))?;
            if !s.weight.is_finite() {
                bail!("config field `systems[{i}].weight`: must be finite");
            }
        }
        if let Some(sim) = &self.simulate {
            check_grid("simulate.amplitudes_rel", &sim.amplitudes_rel, false)?;
            check_grid("simulate.plateau_times", &sim.plateau_times, true)?;
            if !(sim.noise_sigma >= 0.0 && sim.noise_sigma.is_finite()) {
                bail!("config field `simulate.noise_sigma`: must be non-negative, got {}", sim.noise_sigma);
            }
            let s = &sim.sweep;
            if !(s.sample_period > 0.0 && s.sample_period.is_finite()) {
                bail!("config field `simulate.sweep.sample_period`: must be positive, got {}", s.sample_period);
            }
            for (name, v) in [("ramp_time", s.ramp_time), ("pre_pad", s.pre_pad), ("post_pad", s.post_pad)] {
                if !(v >= 0.0 && v.is_finite()) {
                    bail!("config field `simulate.sweep.{name}`: must be non-negative, got {v}");
                }
            }
            if !(s.rel_tol > 0.0 && s.rel_tol < 1.0) {
                bail!("config field `simulate.sweep.rel_tol`: must lie in (0, 1), got {}", s.rel_tol);
            }
            if sim.stem.is_empty() || sim.stem.contains(['/', '\\']) {
                bail!("config field `simulate.stem`: must be a plain file stem, got {:?}", sim.stem);
            }
        }
        if let Some(cal) = &self.calibrate {
            if cal.fir_len == 0 {
                bail!("config field `calibrate.fir_len`: must be at least 1");
            }
            if let Some(f) = cal.noise_floor {
                if !(0.0..1.0).contains(&f) {
                    bail!("config field `calibrate.noise_floor`: must lie in [0, 1), got {f}");
                }
            }
            for (k, &(i, d)) in cal.adjustments.iter().enumerate() {
                if i >= cal.fir_len {
                    bail!("config field `calibrate.adjustments[{k}]`: tap {i} is beyond fir_len {}", cal.fir_len);
                }
                if !d.is_finite() {
                    bail!("config field `calibrate.adjustments[{k}]`: delta must be finite");
                }
            }
        }
        if let Some(v) = &self.verify {
            if !(v.duration > 0.0 && v.duration.is_finite()) {
                bail!("config field `verify.duration`: must be positive, got {}", v.duration);
            }
            if !(v.settle_tolerance > 0.0) {
                bail!("config field `verify.settle_tolerance`: must be positive, got {}", v.settle_tolerance);
            }
            match (&v.fir, v.sample_period) {
                (None, None) => bail!("config field `verify`: give either `fir` or `sample_period`"),
                (_, Some(ts)) if !(ts > 0.0 && ts.is_finite()) => {
                    bail!("config field `verify.sample_period`: must be positive, got {ts}")
                }
                _ => {}
            }
        }
        if let Some(c) = &self.chirp {
            if !(c.angle_step_deg > 0.0 && c.angle_step_deg <= 90.0) {
                bail!("config field `chirp.angle_step_deg`: must lie in (0, 90], got {}", c.angle_step_deg);
            }
            if let TraceSource::Synth { params, sample_period, duration } = &c.trace {
                params.validate().context("config field `chirp.trace.synth.params`")?;
                if !(*sample_period > 0.0 && *duration > *sample_period) {
                    bail!("config field `chirp.trace.synth`: need 0 < sample_period < duration");
                }
            }
        }
        if let Some(n) = &self.noise {
            n.spec.validate().context("config field `noise.spec`")?;
            if !(n.t_c_ghz >= 0.0 && n.t_c_ghz.is_finite()) {
                bail!("config field `noise.t_c_ghz`: must be non-negative, got {}", n.t_c_ghz);
            }
            check_grid("noise.eps_ghz", &n.eps_ghz, false)?;
            check_grid("noise.times", &n.times, true)?;
        }
        Ok(())
    }

    /// Systems in rad/ns with their weights.
    pub fn weighted_params(&self) -> Result<Vec<WeightedParams>> {
        self.systems.iter().map(|s| Ok(WeightedParams { params: s.params()?, weight: s.weight })).collect()
    }
}

fn check_grid(name: &str, g: &Grid, nonneg: bool) -> Result<()> {
    let pts = g.points();
    if pts.is_empty() {
        bail!("config field `{name}`: grid is empty");
    }
    if pts.iter().any(|v| !v.is_finite()) {
        bail!("config field `{name}`: grid has non-finite entries");
    }
    if pts.windows(2).any(|w| w[1] <= w[0]) {
        bail!("config field `{name}`: grid must be strictly increasing");
    }
    if nonneg && pts[0] < 0.0 {
        bail!("config field `{name}`: values must be non-negative");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "systems": [{"eps0_ghz": 20, "t_c_ghz": 0.3, "kappa_ghz": 2}],
        "simulate": {
            "amplitudes_rel": {"linspace": {"start": 0.5, "stop": 1.5, "count": 11}},
            "plateau_times": {"values": [1, 2, 3]}
        }
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.channel, DistortionChannel::identity());
        assert_eq!(c.mode, SweepMode::Ode);
        assert_eq!(c.output_dir, PathBuf::from("out"));
        let sim = c.simulate.unwrap();
        assert_eq!(sim.amplitudes_rel.points().len(), 11);
        assert_eq!(sim.sweep, SweepConfig::default());
        let p = c.systems[0].params().unwrap();
        assert!((p.eps0 - std::f64::consts::TAU * 20.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_key_names_its_path() {
        let bad = MINIMAL.replace("\"count\": 11", "\"count\": 11, \"num\": 3");
        let msg = format!("{:#}", RunConfig::from_json(&bad).unwrap_err());
        assert!(msg.contains("simulate.amplitudes_rel"), "{msg}");
        assert!(msg.contains("num"), "{msg}");
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let bad = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 2");
        let msg = format!("{:#}", RunConfig::from_json(&bad).unwrap_err());
        assert!(msg.contains("schema_version"), "{msg}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let bad = MINIMAL.replace("[1, 2, 3]", "[1, 3, 2]");
        let msg = format!("{:#}", RunConfig::from_json(&bad).unwrap_err());
        assert!(msg.contains("simulate.plateau_times"), "{msg}");
        let bad = MINIMAL.replace("\"kappa_ghz\": 2", "\"kappa_ghz\": -2");
        let msg = format!("{:#}", RunConfig::from_json(&bad).unwrap_err());
        assert!(msg.contains("systems[0]"), "{msg}");
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        let again = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn linspace_endpoints_are_exact() {
        let g = Grid::Linspace { start: 1.0, stop: 20.0, count: 20 };
        let p = g.points();
        assert_eq!(p[0], 1.0);
        assert_eq!(p[19], 20.0);
        assert_eq!(p[4], 5.0);
    }
}
