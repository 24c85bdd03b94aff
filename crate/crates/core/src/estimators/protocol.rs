//! Frame-to-frame support tracking with resets.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::{
    genie_ls, gsomp_estimate, mfista_estimate, ts_estimate, EstimateResult, EstimatorError, EstimatorParams,
    SensingProblem,
};
use crate::channel::{ChannelRealization, SystemConfig};
use crate::codebook::{AngleTuple, GridSpec};
use crate::training::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Ts,
    #[serde(rename = "mfista")]
    MFista,
    Gsomp,
    GenieLs,
    /// Genie LS that ignores beam squint.
    GenieLsNarrowband,
}

impl EstimatorKind {
    /// Whether the estimator consumes a previous support.
    pub fn tracks(&self) -> bool {
        matches!(self, EstimatorKind::Ts | EstimatorKind::MFista)
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Ts => "ts",
            EstimatorKind::MFista => "mfista",
            EstimatorKind::Gsomp => "gsomp",
            EstimatorKind::GenieLs => "genie-ls",
            EstimatorKind::GenieLsNarrowband => "genie-ls-narrowband",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "ts" => EstimatorKind::Ts,
            "mfista" | "m-fista" => EstimatorKind::MFista,
            "gsomp" => EstimatorKind::Gsomp,
            "genie-ls" => EstimatorKind::GenieLs,
            "genie-ls-narrowband" => EstimatorKind::GenieLsNarrowband,
            other => return Err(format!("unknown estimator '{other}'")),
        })
    }
}

/// Where a tracking estimator gets Ω̂^{pr} from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PriorSource {
    /// Ξ̃ of the previous frame (empty on the first frame and after a reset).
    #[default]
    Tracked,
    /// True support of the previous frame (the first frame uses its own).
    TruePrevious,
    /// Always empty.
    Empty,
}

/// Runs one estimator on one frame.
pub fn estimate(
    kind: EstimatorKind,
    problem: &SensingProblem,
    prior: &[usize],
    params: &EstimatorParams,
    truth: Option<&ChannelRealization>,
) -> Result<EstimateResult, EstimatorError> {
    let truth_angles = || -> Result<Vec<AngleTuple>, EstimatorError> {
        truth.map(|t| t.paths.iter().map(|p| p.angles).collect()).ok_or(EstimatorError::NeedsTruth("genie LS"))
    };
    match kind {
        EstimatorKind::Ts => ts_estimate(problem, prior, params),
        EstimatorKind::MFista => mfista_estimate(problem, prior, params),
        EstimatorKind::Gsomp => gsomp_estimate(problem, params),
        EstimatorKind::GenieLs => genie_ls(problem, &truth_angles()?, true),
        EstimatorKind::GenieLsNarrowband => genie_ls(problem, &truth_angles()?, false),
    }
}

#[derive(Debug, Clone)]
pub struct FrameInput {
    pub observation: Observation,
    pub truth: Option<ChannelRealization>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetEvent {
    pub frame: usize,
    pub residual_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct TrackOutput {
    pub results: Vec<EstimateResult>,
    /// Frames whose final estimate used an empty previous support.
    pub initial: Vec<bool>,
    pub resets: Vec<ResetEvent>,
}

/// Feeds each frame's Ξ̃ forward as the next frame's previous support. When
/// the residual ratio of a tracked estimate reaches the reset threshold, the
/// frame is re-estimated from an empty support.
pub fn track_protocol(
    sys: &SystemConfig,
    grid: GridSpec,
    frames: &[FrameInput],
    kind: EstimatorKind,
    source: PriorSource,
    params: &EstimatorParams,
) -> Result<TrackOutput, EstimatorError> {
    let mut results = Vec::with_capacity(frames.len());
    let mut initial = Vec::with_capacity(frames.len());
    let mut resets = Vec::new();
    let mut previous: Vec<usize> = Vec::new();
    for (f, frame) in frames.iter().enumerate() {
        let problem = SensingProblem::new(sys, grid, &frame.observation)?;
        let prior: Vec<usize> = if !kind.tracks() {
            vec![]
        } else {
            match source {
                PriorSource::Tracked => previous.clone(),
                PriorSource::Empty => vec![],
                PriorSource::TruePrevious => {
                    let at = if f == 0 { 0 } else { f - 1 };
                    frames[at].truth.as_ref().map(|t| t.support.clone()).unwrap_or_default()
                }
            }
        };
        let mut result = estimate(kind, &problem, &prior, params, frame.truth.as_ref())?;
        let mut from_scratch = prior.is_empty();
        if !from_scratch && source == PriorSource::Tracked {
            if let Some(th) = params.reset_threshold {
                let ratio = result.diagnostics.residual_ratio;
                if ratio >= th {
                    resets.push(ResetEvent { frame: f, residual_ratio: ratio });
                    log::debug!("frame {f}: residual ratio {ratio:.3e} >= {th:.3e}, resetting support");
                    result = estimate(kind, &problem, &[], params, frame.truth.as_ref())?;
                    from_scratch = true;
                }
            }
        }
        previous = result.support.clone();
        initial.push(from_scratch);
        results.push(result);
    }
    Ok(TrackOutput { results, initial, resets })
}
