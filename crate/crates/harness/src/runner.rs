//! Monte-Carlo sweeps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use thz_core::channel::{channel_matrix, ChannelError, ChannelGenerator, ChannelRealization, SystemConfig};
use thz_core::codebook::GridSpec;
use thz_core::estimators::{track_protocol, EstimatorError, EstimatorParams, FrameInput, PriorSource};
use thz_core::numerics::CMatrix;
use thz_core::training::{calibrate_noise, observe, random_beams, TrainingConfig, TrainingError};

use crate::config::{ExperimentSpec, ResetSetting, SystemSection};
use crate::metrics::{nmse, spectral_efficiency, MetricError, RateSetup};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Setup(String),
}

/// Random streams of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Channel = 0,
    Beams = 1,
    Noise = 2,
}

/// Trials used for threshold calibration live in their own seed domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Sweep = 0,
    Calibration = 1,
}

/// Independent ChaCha stream for (trial, frame, purpose). The axis point is
/// deliberately not part of the key, so every axis value sees the same
/// channels, beams and noise shapes.
pub fn rng_for(root: u64, domain: Domain, trial: usize, frame: usize, stream: Stream) -> ChaCha8Rng {
    assert!(trial < 1 << 32 && frame < 1 << 24, "trial/frame counter overflow");
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(((trial as u64) << 32) | ((frame as u64) << 8) | ((domain as u64) << 4) | stream as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub estimator: String,
    pub axis: String,
    pub axis_value: f64,
    pub trial: usize,
    pub frame: usize,
    pub nmse: f64,
    pub se: f64,
    /// Empty unless timing was requested.
    pub runtime_s: Option<f64>,
    pub resets: usize,
    pub iterations: usize,
}

/// One simulated frame.
#[derive(Debug, Clone)]
pub struct SimFrame {
    pub truth: ChannelRealization,
    pub input: FrameInput,
}

/// Everything fixed at one axis point.
#[derive(Debug, Clone)]
pub struct PointSetup {
    pub section: SystemSection,
    pub sys: SystemConfig,
    pub training: TrainingConfig,
    pub grid: GridSpec,
    pub snr_db: f64,
}

impl PointSetup {
    pub fn new(spec: &ExperimentSpec, value: f64) -> Result<Self, RunError> {
        let section = spec.at(value).map_err(RunError::Setup)?;
        Ok(Self {
            sys: section.system(),
            training: section.training(),
            grid: section.grid(),
            snr_db: spec.snr_at(value),
            section,
        })
    }

    /// Channel sequence, beams and noisy observations of one trial.
    pub fn simulate(&self, root: u64, domain: Domain, trial: usize, frames: usize) -> Result<Vec<SimFrame>, RunError> {
        let generator = ChannelGenerator::new(self.sys.clone(), self.grid)?;
        let mut out: Vec<SimFrame> = Vec::with_capacity(frames);
        for f in 0..frames {
            let mut rng = rng_for(root, domain, trial, f, Stream::Channel);
            let truth = match out.last() {
                None => generator.draw(0, &mut rng),
                Some(prev) => generator.evolve(&prev.truth, &mut rng),
            };
            let beams = random_beams(&self.sys, &self.training, &mut rng_for(root, domain, trial, f, Stream::Beams))?;
            let noise_variance = if self.snr_db.is_finite() {
                calibrate_noise(self.snr_db, &truth, &beams, &self.sys)?
            } else {
                0.0
            };
            let observation =
                observe(&truth, &beams, &self.sys, noise_variance, &mut rng_for(root, domain, trial, f, Stream::Noise))?;
            out.push(SimFrame { input: FrameInput { observation, truth: Some(truth.clone()) }, truth });
        }
        Ok(out)
    }

    pub fn rate_setup(&self, noise_variance: f64) -> RateSetup {
        RateSetup {
            transmit_power: 1.0,
            noise_variance,
            streams: self.section.data_streams,
            bandwidth_hz: self.sys.bandwidth_hz,
            training_fraction: self.section.training_fraction(),
        }
    }
}

fn true_channels(real: &ChannelRealization, sys: &SystemConfig) -> Result<Vec<CMatrix>, RunError> {
    (1..=sys.subcarriers).map(|k| channel_matrix(real, k, sys).map_err(RunError::from)).collect()
}

/// Runs every estimator over one trial's frames.
pub fn evaluate_trial(
    spec: &ExperimentSpec,
    setup: &PointSetup,
    frames: &[SimFrame],
    thresholds: &[Option<f64>],
    axis_value: f64,
    trial: usize,
) -> Result<Vec<MetricRecord>, RunError> {
    let truths: Vec<Vec<CMatrix>> = frames.iter().map(|f| true_channels(&f.truth, &setup.sys)).collect::<Result<_, _>>()?;
    let inputs: Vec<FrameInput> = frames.iter().map(|f| f.input.clone()).collect();
    let mut records = Vec::new();
    for (e, est) in spec.estimators.iter().enumerate() {
        let mut params = est.params(&setup.sys, &spec.estimation);
        if matches!(spec.estimation.reset_threshold, Some(ResetSetting::Auto(_))) {
            params.reset_threshold = thresholds[e];
        }
        let out = track_protocol(&setup.sys, setup.grid, &inputs, est.kind, est.prior, &params)?;
        for (f, result) in out.results.iter().enumerate() {
            let obs = &inputs[f].observation;
            let pilots = obs.subcarriers();
            let estimate = result.channels(&setup.sys);
            let pick = |all: &[CMatrix]| pilots.iter().map(|&k| all[k - 1].clone()).collect::<Vec<_>>();
            let error = nmse(&pick(&truths[f]), &pick(&estimate))?;
            let se = spectral_efficiency(&truths[f], &estimate, &pilots, &setup.rate_setup(obs.noise_variance))?;
            records.push(MetricRecord {
                estimator: est.label(),
                axis: spec.sweep.axis.name().to_string(),
                axis_value,
                trial,
                frame: f,
                nmse: error,
                se,
                runtime_s: spec.output.timing.then_some(result.diagnostics.runtime_s),
                resets: out.resets.iter().filter(|r| r.frame == f).count(),
                iterations: result.diagnostics.iterations,
            });
        }
    }
    Ok(records)
}

/// Nearest-rank quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

/// Per-estimator reset threshold at one axis point: the (1 − reset_fraction)
/// quantile of the residual ratio of tracked frames in reset-free runs.
pub fn calibrate_thresholds(spec: &ExperimentSpec, setup: &PointSetup) -> Result<Vec<Option<f64>>, RunError> {
    let trials = spec.estimation.calibration_trials.max(1);
    let frames = spec.sweep.frames;
    let per_trial: Vec<Result<Vec<Vec<f64>>, RunError>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let sim = setup.simulate(spec.seed, Domain::Calibration, t, frames)?;
            let inputs: Vec<FrameInput> = sim.into_iter().map(|f| f.input).collect();
            spec.estimators
                .iter()
                .map(|est| {
                    if !est.kind.tracks() || est.prior != PriorSource::Tracked || frames < 2 {
                        return Ok(vec![]);
                    }
                    let params = EstimatorParams { reset_threshold: None, ..est.params(&setup.sys, &spec.estimation) };
                    let out = track_protocol(&setup.sys, setup.grid, &inputs, est.kind, est.prior, &params)?;
                    Ok(out.results[1..].iter().map(|r| r.diagnostics.residual_ratio).collect())
                })
                .collect()
        })
        .collect();
    let mut pooled = vec![Vec::new(); spec.estimators.len()];
    for trial in per_trial {
        for (e, ratios) in trial?.into_iter().enumerate() {
            pooled[e].extend(ratios);
        }
    }
    Ok(pooled.iter().map(|r| quantile(r, 1.0 - spec.estimation.reset_fraction)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub estimator: String,
    pub axis_value: f64,
    pub reset_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub estimator: String,
    pub axis: String,
    pub axis_value: f64,
    pub count: usize,
    pub nmse_mean: f64,
    pub nmse_std: f64,
    pub se_mean: f64,
    pub se_std: f64,
    pub resets: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<MetricRecord>,
    pub thresholds: Vec<Threshold>,
    /// (axis value, trial, message) of aborted trials.
    pub failures: Vec<(f64, usize, String)>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// One row per (estimator, axis value); estimators keep their first-seen
/// order and axis values ascend.
pub fn summarize(records: &[MetricRecord]) -> Vec<SummaryRow> {
    let mut labels: Vec<&str> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for r in records {
        if !labels.contains(&r.estimator.as_str()) {
            labels.push(&r.estimator);
        }
        if !values.contains(&r.axis_value) {
            values.push(r.axis_value);
        }
    }
    values.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    for label in labels {
        for &v in &values {
            let recs: Vec<&MetricRecord> =
                records.iter().filter(|r| r.estimator == label && r.axis_value == v).collect();
            let Some(first) = recs.first() else { continue };
            let (nmse_mean, nmse_std) = mean_std(&recs.iter().map(|r| r.nmse).collect::<Vec<_>>());
            let (se_mean, se_std) = mean_std(&recs.iter().map(|r| r.se).collect::<Vec<_>>());
            rows.push(SummaryRow {
                estimator: label.to_string(),
                axis: first.axis.clone(),
                axis_value: v,
                count: recs.len(),
                nmse_mean,
                nmse_std,
                se_mean,
                se_std,
                resets: recs.iter().map(|r| r.resets).sum(),
            });
        }
    }
    rows
}

/// Runs the sweep on a pool of `threads` workers (0 = rayon's default).
/// Records come back sorted by (estimator, axis value, trial, frame), so the
/// output does not depend on scheduling.
pub fn run_experiment(spec: &ExperimentSpec, threads: usize) -> Result<ExperimentOutput, RunError> {
    spec.validate().map_err(|e| RunError::Setup(e.to_string()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RunError::Setup(e.to_string()))?;
    pool.install(|| run_in_pool(spec))
}

fn run_in_pool(spec: &ExperimentSpec) -> Result<ExperimentOutput, RunError> {
    let setups: Vec<PointSetup> =
        spec.sweep.values.iter().map(|&v| PointSetup::new(spec, v)).collect::<Result<_, _>>()?;
    let auto = matches!(spec.estimation.reset_threshold, Some(ResetSetting::Auto(_)));
    let mut thresholds = Vec::new();
    let mut per_point = Vec::with_capacity(setups.len());
    for (setup, &v) in setups.iter().zip(&spec.sweep.values) {
        let t = if auto { calibrate_thresholds(spec, setup)? } else { vec![None; spec.estimators.len()] };
        if auto {
            for (est, th) in spec.estimators.iter().zip(&t) {
                log::info!("{} at {} = {v}: reset threshold {th:?}", est.label(), spec.sweep.axis.name());
                thresholds.push(Threshold { estimator: est.label(), axis_value: v, reset_threshold: *th });
            }
        }
        per_point.push(t);
    }

    let jobs: Vec<(usize, usize)> =
        (0..setups.len()).flat_map(|p| (0..spec.sweep.trials).map(move |t| (p, t))).collect();
    let outcomes: Vec<(usize, usize, Result<Vec<MetricRecord>, RunError>)> = jobs
        .par_iter()
        .map(|&(p, t)| {
            let v = spec.sweep.values[p];
            let res = setups[p]
                .simulate(spec.seed, Domain::Sweep, t, spec.sweep.frames)
                .and_then(|frames| evaluate_trial(spec, &setups[p], &frames, &per_point[p], v, t));
            (p, t, res)
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (p, t, res) in outcomes {
        match res {
            Ok(r) => records.extend(r),
            Err(e) => {
                let v = spec.sweep.values[p];
                log::warn!("trial {t} at {} = {v} aborted: {e}", spec.sweep.axis.name());
                failures.push((v, t, e.to_string()));
            }
        }
    }
    let order: Vec<String> = spec.estimators.iter().map(|e| e.label()).collect();
    let rank = |r: &MetricRecord| order.iter().position(|l| *l == r.estimator).unwrap_or(usize::MAX);
    records.sort_by(|a, b| {
        rank(a)
            .cmp(&rank(b))
            .then(a.axis_value.total_cmp(&b.axis_value))
            .then(a.trial.cmp(&b.trial))
            .then(a.frame.cmp(&b.frame))
    });
    Ok(ExperimentOutput { records, thresholds, failures })
}
