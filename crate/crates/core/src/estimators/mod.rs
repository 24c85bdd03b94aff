//! Channel estimators: MMV-LS, SOMP, the two-stage and FISTA-based LS-CS
//! estimators, hierarchical search, refinement and genie baselines.

mod fista;
mod genie;
mod greedy;
mod protocol;
mod refine;
mod search;
mod ts;

pub use fista::{
    group_prox, mfista_estimate, mixed_norm, momentum_sequence, run_fista, FistaOutput, GroupLasso,
};
pub use genie::genie_ls;
pub use greedy::{mmv_cs_somp, mmv_ls, LsStage, SompOutput};
pub use protocol::{estimate, track_protocol, EstimatorKind, FrameInput, PriorSource, ResetEvent, TrackOutput};
pub use refine::{refine, RefinedPath};
pub use search::{enhance_resolution, sequential_search, SearchOutcome};
pub use ts::{cs_only_estimate, gsomp_estimate, ts_estimate, ts_estimate_with};

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

use crate::channel::SystemConfig;
use crate::codebook::{
    build_dictionaries, equivalent_vector, upa_vector, AngleTuple, DictionaryError, DictionarySet, GridIndex,
    GridSpec,
};
use crate::numerics::{vectorize, CMatrix, CVector, NumericsError, C64};
use crate::training::{noise_gain, Observation};

/// Combined-index magnitudes at or below this count as zero.
pub const NONZERO_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("invalid estimator parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Dictionary(#[from] DictionaryError),
    #[error("observation has no pilot subcarriers")]
    NoPilots,
    #[error("{0} needs the true channel of the frame")]
    NeedsTruth(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorParams {
    /// L
    pub paths: usize,
    /// L_cm
    pub common_paths: usize,
    /// m in L′ = ⌊mL⌋.
    pub support_multiplier: f64,
    /// SOMP t_max; 2L when unset.
    pub somp_max_iterations: Option<usize>,
    /// SOMP ε as a fraction of the mean pilot signal power.
    pub somp_tolerance: f64,
    /// FISTA U_max.
    pub fista_max_iterations: usize,
    /// FISTA ε as a fraction of the initial objective.
    pub fista_tolerance: f64,
    /// c_λ in λ = c_λ·σ_n·√(Q_pT_p).
    pub lambda_scale: f64,
    /// Overrides the noise-derived λ.
    pub lambda: Option<f64>,
    pub refine: bool,
    /// Try every δ_p-th root branch and keep the best-fitting one.
    pub root_disambiguation: bool,
    /// Residual ratio at or above which tracking resets; `None` never resets.
    pub reset_threshold: Option<f64>,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self {
            paths: 4,
            common_paths: 3,
            support_multiplier: 4.0,
            somp_max_iterations: None,
            somp_tolerance: 1e-3,
            fista_max_iterations: 500,
            fista_tolerance: 1e-6,
            lambda_scale: 0.3,
            lambda: None,
            refine: true,
            root_disambiguation: false,
            reset_threshold: None,
        }
    }
}

impl EstimatorParams {
    pub fn for_system(sys: &SystemConfig) -> Self {
        Self { paths: sys.paths, common_paths: sys.common_paths, ..Self::default() }
    }

    /// L′
    pub fn support_size(&self) -> usize {
        (self.support_multiplier * self.paths as f64).floor() as usize
    }

    pub fn somp_iterations(&self) -> usize {
        self.somp_max_iterations.unwrap_or(2 * self.paths)
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let fail = |m: &str| Err(EstimatorError::Params(m.to_string()));
        if self.common_paths > self.paths {
            return fail("L_cm must not exceed L");
        }
        if self.support_size() < self.paths || self.support_size() == 0 {
            return fail("L' = floor(mL) must be at least max(L, 1)");
        }
        if !(self.fista_tolerance >= 0.0 && self.somp_tolerance >= 0.0 && self.lambda_scale >= 0.0) {
            return fail("tolerances and lambda scale must be non-negative");
        }
        if matches!(self.lambda, Some(l) if !(l >= 0.0)) {
            return fail("lambda must be non-negative");
        }
        Ok(())
    }
}

/// One frame's measurements with everything needed to evaluate atoms.
#[derive(Debug, Clone)]
pub struct SensingProblem<'a> {
    pub sys: &'a SystemConfig,
    pub grid: GridSpec,
    pub obs: &'a Observation,
    /// Level-1 dictionaries Θ_k^{(1)}.
    pub coarse: DictionarySet,
    /// vec(Y_k) per pilot.
    pub y: Vec<CVector>,
    pub deltas: Vec<f64>,
}

impl<'a> SensingProblem<'a> {
    pub fn new(sys: &'a SystemConfig, grid: GridSpec, obs: &'a Observation) -> Result<Self, EstimatorError> {
        if obs.beams.is_empty() {
            return Err(EstimatorError::NoPilots);
        }
        let coarse = build_dictionaries(sys, &grid, 1, &obs.beams)?;
        let y = obs.measurements.iter().map(vectorize).collect();
        let deltas = obs.beams.iter().map(|b| sys.subcarrier_offset(b.subcarrier)).collect();
        Ok(Self { sys, grid, obs, coarse, y, deltas })
    }

    pub fn pilots(&self) -> usize {
        self.y.len()
    }

    pub fn finest(&self) -> usize {
        self.grid.levels
    }

    /// Level-M atom index → angles.
    pub fn atom_angles(&self, atom: usize) -> AngleTuple {
        GridIndex::from_flat(atom, &self.grid, self.finest()).angles(&self.grid, self.finest())
    }

    /// Equivalent dictionary vector of arbitrary angles on pilot `k`.
    pub fn angle_column(&self, k: usize, angles: &AngleTuple) -> CVector {
        equivalent_vector(self.sys, &self.obs.beams[k], angles, self.deltas[k])
    }

    pub fn angle_columns(&self, k: usize, angles: &[AngleTuple]) -> CMatrix {
        let mut m = CMatrix::zeros(self.y[k].len(), angles.len());
        for (c, a) in angles.iter().enumerate() {
            m.set_column(c, &self.angle_column(k, a));
        }
        m
    }

    /// Expected combined-noise power Σ_k σ_n² T_p tr(W_kᴴW_k).
    pub fn expected_noise_power(&self) -> f64 {
        self.obs.noise_variance * noise_gain(&self.obs.beams)
    }

    pub fn measurement_power(&self) -> f64 {
        self.y.iter().map(|v| v.norm_squared()).sum()
    }
}

/// Columns indexed by `usize` atoms, one matrix per pilot subcarrier.
pub trait AtomDictionary {
    fn pilots(&self) -> usize;
    fn column(&self, k: usize, atom: usize) -> CVector;
    /// Best atom outside `exclude` for the residuals, maximizing Σ_k|colᴴr_k|²,
    /// together with the number of candidate tuples scored. `None` when
    /// nothing is selectable or every correlation vanishes.
    fn select(&self, residuals: &[CVector], exclude: &BTreeSet<usize>) -> Option<(usize, usize)>;

    fn columns(&self, k: usize, atoms: &[usize]) -> CMatrix {
        let first = self.column(k, atoms.first().copied().unwrap_or(0));
        let mut m = CMatrix::zeros(first.len(), atoms.len());
        for (c, &a) in atoms.iter().enumerate() {
            m.set_column(c, &self.column(k, a));
        }
        m
    }
}

/// Exhaustive search over a materialized-per-pilot dictionary set.
pub struct FlatDictionary<'a>(pub &'a DictionarySet);

impl AtomDictionary for FlatDictionary<'_> {
    fn pilots(&self) -> usize {
        self.0.pilots.len()
    }

    fn column(&self, k: usize, atom: usize) -> CVector {
        self.0.pilots[k].column(atom)
    }

    fn select(&self, residuals: &[CVector], exclude: &BTreeSet<usize>) -> Option<(usize, usize)> {
        let scores = correlation_scores(self.0, residuals);
        argmax_excluding(&scores, exclude).map(|j| (j, scores.len()))
    }
}

/// Σ_k |Θ_k(:,j)ᴴ r_k|² for every column j.
pub fn correlation_scores(dict: &DictionarySet, residuals: &[CVector]) -> Vec<f64> {
    let mut scores = vec![0.0; dict.columns()];
    for (p, r) in dict.pilots.iter().zip(residuals) {
        for (s, c) in scores.iter_mut().zip(p.correlate(r).iter()) {
            *s += c.norm_sqr();
        }
    }
    scores
}

/// Largest strictly positive score outside `exclude`; ties go to the lowest index.
pub(crate) fn argmax_excluding(scores: &[f64], exclude: &BTreeSet<usize>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &s) in scores.iter().enumerate() {
        if exclude.contains(&j) || !(s > 0.0) {
            continue;
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    best.map(|(j, _)| j)
}

/// Level-1 correlation followed by sequential refinement to the finest grid.
/// Atoms are finest-level flat indices.
pub struct HierarchicalDictionary<'p, 'a> {
    pub problem: &'p SensingProblem<'a>,
}

impl AtomDictionary for HierarchicalDictionary<'_, '_> {
    fn pilots(&self) -> usize {
        self.problem.pilots()
    }

    fn column(&self, k: usize, atom: usize) -> CVector {
        self.problem.angle_column(k, &self.problem.atom_angles(atom))
    }

    fn select(&self, residuals: &[CVector], exclude: &BTreeSet<usize>) -> Option<(usize, usize)> {
        let scores = correlation_scores(&self.problem.coarse, residuals);
        let mut evaluations = scores.len();
        let mut order: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] > 0.0).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        for j1 in order {
            let start = GridIndex::from_flat(j1, &self.problem.grid, 1);
            let found = sequential_search(self.problem, residuals, start);
            evaluations += found.evaluations;
            let atom = found.index.flat(&self.problem.grid, self.problem.finest());
            if !exclude.contains(&atom) {
                return Some((atom, evaluations));
            }
        }
        None
    }
}

/// How Ĥ_k is produced from per-path gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PathGains {
    /// (α̂′, ẑ) per path.
    Refined(Vec<RefinedPath>),
    /// Per-pilot LS coefficients; other subcarriers reuse the nearest pilot.
    PerPilot { subcarriers: Vec<usize>, coefficients: Vec<CVector> },
}

/// Reconstructed channel model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEstimate {
    pub angles: Vec<AngleTuple>,
    pub gains: PathGains,
    /// When false, steering vectors ignore beam squint (Δ = 0).
    pub spatial_wideband: bool,
}

impl ChannelEstimate {
    pub fn channel_matrix(&self, k: usize, sys: &SystemConfig) -> CMatrix {
        let delta = sys.subcarrier_offset(k);
        let steer = if self.spatial_wideband { delta } else { 0.0 };
        let coefs: Vec<C64> = match &self.gains {
            PathGains::Refined(paths) => {
                let x = k as f64 - (sys.subcarriers as f64 + 1.0) / 2.0;
                paths.iter().map(|p| p.coefficient(x, delta, sys)).collect()
            }
            PathGains::PerPilot { subcarriers, coefficients } => {
                let nearest = subcarriers
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, &s)| s.abs_diff(k))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                coefficients.get(nearest).map(|c| c.iter().copied().collect()).unwrap_or_default()
            }
        };
        let mut h = CMatrix::zeros(sys.rx.total(), sys.tx.total());
        for (a, c) in self.angles.iter().zip(coefs) {
            let br = upa_vector(sys.rx, a.rx_h, a.rx_v, steer, sys.carrier_hz);
            let bt = upa_vector(sys.tx, a.tx_h, a.tx_v, steer, sys.carrier_hz);
            h.ger(c, &br, &bt.conjugate(), C64::from(1.0));
        }
        h
    }

    /// Ĥ_k for k = 1..K_o.
    pub fn channels(&self, sys: &SystemConfig) -> Vec<CMatrix> {
        (1..=sys.subcarriers).map(|k| self.channel_matrix(k, sys)).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// SOMP or FISTA iterations.
    pub iterations: usize,
    /// Candidate angle tuples scored by hierarchical search.
    pub search_evaluations: usize,
    pub converged: bool,
    /// Σ_k‖y_k − [Θ_k]_Ξ̃ q̂_k‖².
    pub residual_power: f64,
    /// residual_power / Σ_k‖y_k‖², the tracking-reset statistic.
    pub residual_ratio: f64,
    pub runtime_s: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    /// Ξ̃ as finest-level flat indices (empty for genie runs on off-grid angles).
    pub support: Vec<usize>,
    /// q̂_k on the support, per pilot.
    pub coefficients: Vec<CVector>,
    pub estimate: ChannelEstimate,
    pub diagnostics: Diagnostics,
}

impl EstimateResult {
    pub fn channel_matrix(&self, k: usize, sys: &SystemConfig) -> CMatrix {
        self.estimate.channel_matrix(k, sys)
    }

    pub fn channels(&self, sys: &SystemConfig) -> Vec<CMatrix> {
        self.estimate.channels(sys)
    }
}

/// Top-`n` entries of `weights` (ties → lower atom), returned in atom order.
pub(crate) fn top_atoms(atoms: &[usize], weights: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..atoms.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(atoms[a].cmp(&atoms[b])));
    let mut picked: Vec<usize> = order.into_iter().take(n).map(|i| atoms[i]).collect();
    picked.sort_unstable();
    picked
}

/// Reconstructs the channel on `support` (refined or per-pilot LS) and fills
/// the residual diagnostics.
pub(crate) fn finish(
    problem: &SensingProblem,
    support: Vec<usize>,
    params: &EstimatorParams,
    mut diagnostics: Diagnostics,
) -> Result<EstimateResult, EstimatorError> {
    let angles: Vec<AngleTuple> = support.iter().map(|&a| problem.atom_angles(a)).collect();
    let out = refine(problem, &angles, params.refine, params.root_disambiguation)?;
    let measured = problem.measurement_power();
    diagnostics.residual_power = out.residual_power;
    diagnostics.residual_ratio = if measured > 0.0 { out.residual_power / measured } else { 0.0 };
    diagnostics.notes.extend(out.notes);
    Ok(EstimateResult { support, coefficients: out.coefficients, estimate: out.estimate, diagnostics })
}
