//! Experiment spec files.
//!
//! A spec is TOML with the system parameters under `[system]` (named as in the
//! simulation tables: `f_c`, `B`, `K_o`, `L`, `L_cm`, `N_r`, `N_t`, `G_sub_r`,
//! `G_sub_t`, `K_p`, `Q_p`, `T_p`, `frame_duration`, `subframe_duration`),
//! shared estimator settings under `[estimation]`, one `[[estimator]]` table
//! per curve and the sweep under `[sweep]`.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use thz_core::channel::{AngleMode, GainModel, PhysicalScenario, SystemConfig};
use thz_core::codebook::{GridSpec, UpaSize};
use thz_core::estimators::{EstimatorKind, EstimatorParams, PriorSource};
use thz_core::training::{RfChains, TrainingConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed spec: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    Desk,
    Paper,
}

/// `[system]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub f_c: f64,
    #[serde(rename = "B")]
    pub bandwidth: f64,
    #[serde(rename = "K_o")]
    pub subcarriers: usize,
    #[serde(rename = "L")]
    pub paths: usize,
    #[serde(rename = "L_cm")]
    pub common_paths: usize,
    /// [vertical, horizontal]
    #[serde(rename = "N_r")]
    pub rx: [usize; 2],
    #[serde(rename = "N_t")]
    pub tx: [usize; 2],
    #[serde(rename = "G_sub_r")]
    pub sub_rx: usize,
    #[serde(rename = "G_sub_t")]
    pub sub_tx: usize,
    #[serde(rename = "M", default = "two")]
    pub levels: usize,
    #[serde(rename = "K_p")]
    pub pilots: usize,
    #[serde(rename = "Q_p")]
    pub streams: usize,
    #[serde(rename = "T_p")]
    pub subframes: usize,
    pub frame_duration: f64,
    pub subframe_duration: f64,
    #[serde(default = "default_delay_min")]
    pub delay_min: f64,
    #[serde(default = "default_delay_max")]
    pub delay_max: f64,
    #[serde(default)]
    pub gain_variance: Option<f64>,
    #[serde(default)]
    pub angle_mode: AngleMode,
    #[serde(default)]
    pub gain_model: GainModel,
    #[serde(default)]
    pub rf_chains: Option<[usize; 2]>,
    /// Data streams N_s for the spectral efficiency.
    #[serde(rename = "N_s", default = "four")]
    pub data_streams: usize,
}

fn two() -> usize {
    2
}
fn four() -> usize {
    4
}
fn default_delay_min() -> f64 {
    SystemConfig::paper().delay_min_s
}
fn default_delay_max() -> f64 {
    SystemConfig::paper().delay_max_s
}

impl SystemSection {
    pub fn preset(scale: Scale) -> Self {
        let (sys, train, grid) = match scale {
            Scale::Desk => (SystemConfig::desk(), TrainingConfig::desk(), GridSpec::new(8, 4, 2)),
            Scale::Paper => (
                SystemConfig::paper(),
                TrainingConfig { streams: 25, subframes: 25, pilot_subcarriers: 10, rf_chains: None, share_beams: false },
                GridSpec::new(16, 4, 2),
            ),
        };
        Self {
            f_c: sys.carrier_hz,
            bandwidth: sys.bandwidth_hz,
            subcarriers: sys.subcarriers,
            paths: sys.paths,
            common_paths: sys.common_paths,
            rx: [sys.rx.vertical, sys.rx.horizontal],
            tx: [sys.tx.vertical, sys.tx.horizontal],
            sub_rx: grid.sub_rx,
            sub_tx: grid.sub_tx,
            levels: grid.levels,
            pilots: train.pilot_subcarriers,
            streams: train.streams,
            subframes: train.subframes,
            frame_duration: sys.frame_duration_s,
            subframe_duration: sys.subframe_duration_s,
            delay_min: sys.delay_min_s,
            delay_max: sys.delay_max_s,
            gain_variance: None,
            angle_mode: AngleMode::OffGrid,
            gain_model: GainModel::Approximate,
            rf_chains: None,
            data_streams: 4,
        }
    }

    pub fn system(&self) -> SystemConfig {
        SystemConfig {
            carrier_hz: self.f_c,
            bandwidth_hz: self.bandwidth,
            subcarriers: self.subcarriers,
            rx: UpaSize::new(self.rx[0], self.rx[1]),
            tx: UpaSize::new(self.tx[0], self.tx[1]),
            antenna_spacing_m: None,
            paths: self.paths,
            common_paths: self.common_paths,
            gain_variance: self.gain_variance,
            delay_min_s: self.delay_min,
            delay_max_s: self.delay_max,
            frame_duration_s: self.frame_duration,
            subframe_duration_s: self.subframe_duration,
            gain_model: self.gain_model,
            angle_mode: self.angle_mode,
            physical: (self.gain_model == GainModel::Physical).then(PhysicalScenario::default),
            ..SystemConfig::paper()
        }
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            streams: self.streams,
            subframes: self.subframes,
            pilot_subcarriers: self.pilots,
            rf_chains: self.rf_chains.map(|[rx, tx]| RfChains { rx, tx }),
            share_beams: false,
        }
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::new(self.sub_rx, self.sub_tx, self.levels)
    }

    /// Fraction of the frame spent on pilots, T_p·δ_s / T_frame.
    pub fn training_fraction(&self) -> f64 {
        (self.subframes as f64 * self.subframe_duration / self.frame_duration).min(1.0)
    }
}

/// Reset threshold of the tracking protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ResetSetting {
    Fixed(f64),
    /// `"auto"`: calibrated per axis point from reset-free tracking runs.
    Auto(AutoToken),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoToken {
    Auto,
}

/// `[estimation]`: settings shared by every estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSection {
    pub support_multiplier: f64,
    pub somp_max_iterations: Option<usize>,
    pub somp_tolerance: f64,
    pub fista_max_iterations: usize,
    pub fista_tolerance: f64,
    pub lambda_scale: f64,
    pub lambda: Option<f64>,
    pub refine: bool,
    pub root_disambiguation: bool,
    /// Unset: never reset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reset_threshold: Option<ResetSetting>,
    /// Fraction of tracked frames allowed to reset under `"auto"`.
    pub reset_fraction: f64,
    /// Trials per axis point used to calibrate `"auto"`.
    pub calibration_trials: usize,
}

impl Default for EstimationSection {
    fn default() -> Self {
        let p = EstimatorParams::default();
        Self {
            support_multiplier: p.support_multiplier,
            somp_max_iterations: p.somp_max_iterations,
            somp_tolerance: p.somp_tolerance,
            fista_max_iterations: p.fista_max_iterations,
            fista_tolerance: p.fista_tolerance,
            lambda_scale: p.lambda_scale,
            lambda: p.lambda,
            refine: p.refine,
            root_disambiguation: p.root_disambiguation,
            reset_threshold: None,
            reset_fraction: 0.1,
            calibration_trials: 10,
        }
    }
}

/// One `[[estimator]]` curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    /// Name in the CSV; defaults to the kind.
    #[serde(default)]
    pub label: Option<String>,
    pub kind: EstimatorKind,
    #[serde(default)]
    pub prior: PriorSource,
    #[serde(default)]
    pub refine: Option<bool>,
    #[serde(default)]
    pub lambda_scale: Option<f64>,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind) -> Self {
        Self { label: None, kind, prior: PriorSource::Tracked, refine: None, lambda_scale: None }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.kind.name().to_string())
    }

    pub fn params(&self, sys: &SystemConfig, shared: &EstimationSection) -> EstimatorParams {
        EstimatorParams {
            paths: sys.paths,
            common_paths: sys.common_paths,
            support_multiplier: shared.support_multiplier,
            somp_max_iterations: shared.somp_max_iterations,
            somp_tolerance: shared.somp_tolerance,
            fista_max_iterations: shared.fista_max_iterations,
            fista_tolerance: shared.fista_tolerance,
            lambda_scale: self.lambda_scale.unwrap_or(shared.lambda_scale),
            lambda: shared.lambda,
            refine: self.refine.unwrap_or(shared.refine),
            root_disambiguation: shared.root_disambiguation,
            reset_threshold: match shared.reset_threshold {
                Some(ResetSetting::Fixed(t)) => Some(t),
                _ => None,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// SNR in dB.
    Snr,
    /// Pilot subcarriers K_p.
    Kp,
    /// M_p = Q_pT_p/(N_rN_t), realized with Q_p = T_p.
    MeasurementRatio,
    /// Bandwidth in Hz.
    Bandwidth,
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::Snr => "snr_db",
            Axis::Kp => "K_p",
            Axis::MeasurementRatio => "M_p",
            Axis::Bandwidth => "B",
        }
    }
}

/// `[sweep]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub trials: usize,
    #[serde(default = "one")]
    pub frames: usize,
    /// SNR when the axis is not SNR.
    #[serde(default = "twenty")]
    pub snr_db: f64,
}

fn one() -> usize {
    1
}
fn twenty() -> f64 {
    20.0
}

/// `[output]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    /// Write measured wall-clock time in `runtime_s`; off by default so that
    /// re-runs produce identical files.
    pub timing: bool,
    pub plots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "results".into(), timing: false, plots: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub seed: u64,
    pub system: SystemSection,
    #[serde(default)]
    pub estimation: EstimationSection,
    #[serde(rename = "estimator")]
    pub estimators: Vec<EstimatorSpec>,
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.sweep.trials == 0 || self.sweep.frames == 0 {
            return bad("trials and frames must be at least 1".into());
        }
        if self.sweep.values.is_empty() {
            return bad("sweep needs at least one axis value".into());
        }
        if self.sweep.values.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("axis values must be strictly increasing".into());
        }
        if self.estimators.is_empty() {
            return bad("no [[estimator]] entries".into());
        }
        let mut labels: Vec<String> = self.estimators.iter().map(|e| e.label()).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("estimator labels must be unique".into());
        }
        if self.system.data_streams == 0 {
            return bad("N_s must be at least 1".into());
        }
        if !(self.estimation.reset_fraction > 0.0 && self.estimation.reset_fraction < 1.0) {
            return bad("reset_fraction must lie in (0, 1)".into());
        }
        for v in &self.sweep.values {
            let point = self.at(*v).map_err(ConfigError::Invalid)?;
            let sys = point.system();
            sys.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            point.training().validate(&sys).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            point.grid().validate(sys.rx, sys.tx).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if point.data_streams > sys.rx.total().min(sys.tx.total()) {
                return bad(format!("N_s = {} exceeds min(N_r, N_t)", point.data_streams));
            }
        }
        for e in &self.estimators {
            e.params(&self.system.system(), &self.estimation)
                .validate()
                .map_err(|err| ConfigError::Invalid(format!("{}: {err}", e.label())))?;
        }
        Ok(())
    }

    /// System section with the axis applied.
    pub fn at(&self, value: f64) -> Result<SystemSection, String> {
        let mut s = self.system.clone();
        let as_count = |v: f64, what: &str| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(format!("{what} axis value {v} is not a positive integer"))
            }
        };
        match self.sweep.axis {
            Axis::Snr => {}
            Axis::Kp => s.pilots = as_count(value, "K_p")?,
            Axis::MeasurementRatio => {
                if !(value > 0.0) {
                    return Err(format!("M_p axis value {value} must be positive"));
                }
                let n = (value * (s.rx[0] * s.rx[1] * s.tx[0] * s.tx[1]) as f64).sqrt().round().max(1.0);
                s.streams = n as usize;
                s.subframes = n as usize;
            }
            Axis::Bandwidth => s.bandwidth = value,
        }
        Ok(s)
    }

    pub fn snr_at(&self, value: f64) -> f64 {
        match self.sweep.axis {
            Axis::Snr => value,
            _ => self.sweep.snr_db,
        }
    }

    /// Replaces `[system]` with a preset, keeping everything else.
    pub fn with_scale(mut self, scale: Scale) -> Self {
        let keep = (self.system.angle_mode, self.system.gain_model);
        self.system = SystemSection::preset(scale);
        (self.system.angle_mode, self.system.gain_model) = keep;
        self
    }
}
