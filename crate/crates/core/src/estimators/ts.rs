//! Two-stage LS-CS estimator and the SOMP-only baselines.

use std::collections::BTreeMap;
use std::time::Instant;

use super::{
    enhance_resolution, finish, mmv_cs_somp, mmv_ls, top_atoms, AtomDictionary, Diagnostics, EstimateResult,
    EstimatorError, EstimatorParams, FlatDictionary, HierarchicalDictionary, LsStage, SensingProblem, SompOutput,
    NONZERO_FLOOR,
};
use crate::numerics::{least_squares, CVector, C64};

fn somp_tolerance(problem: &SensingProblem, params: &EstimatorParams) -> f64 {
    params.somp_tolerance * problem.measurement_power() / problem.pilots() as f64
}

/// LS on the tracked support, SOMP on its residual, joint refit and top-L′ pruning.
pub fn ts_estimate(
    problem: &SensingProblem,
    prior: &[usize],
    params: &EstimatorParams,
) -> Result<EstimateResult, EstimatorError> {
    ts_estimate_with(problem, &HierarchicalDictionary { problem }, prior, params)
}

pub fn ts_estimate_with<D: AtomDictionary>(
    problem: &SensingProblem,
    dict: &D,
    prior: &[usize],
    params: &EstimatorParams,
) -> Result<EstimateResult, EstimatorError> {
    params.validate()?;
    let start = Instant::now();
    let ls = mmv_ls(&problem.y, dict, prior, params.common_paths)?;
    let y_cs: Vec<CVector> = if ls.support.is_empty() {
        problem.y.clone()
    } else {
        (0..problem.pilots())
            .map(|k| &problem.y[k] - dict.columns(k, &ls.support) * &ls.coefficients[k])
            .collect()
    };
    let somp = mmv_cs_somp(&y_cs, dict, somp_tolerance(problem, params), params.somp_iterations())?;
    combine(problem, dict, &ls, &somp, params, start)
}

/// The CS branch alone (no previous support).
pub fn cs_only_estimate(problem: &SensingProblem, params: &EstimatorParams) -> Result<EstimateResult, EstimatorError> {
    params.validate()?;
    let start = Instant::now();
    let dict = HierarchicalDictionary { problem };
    let somp = mmv_cs_somp(&problem.y, &dict, somp_tolerance(problem, params), params.somp_iterations())?;
    let empty = LsStage { support: vec![], coefficients: vec![CVector::zeros(0); problem.pilots()] };
    combine(problem, &dict, &empty, &somp, params, start)
}

fn combine<D: AtomDictionary>(
    problem: &SensingProblem,
    dict: &D,
    ls: &LsStage,
    somp: &SompOutput,
    params: &EstimatorParams,
    start: Instant,
) -> Result<EstimateResult, EstimatorError> {
    let pilots = problem.pilots();
    let mut summed: BTreeMap<usize, Vec<C64>> = BTreeMap::new();
    for (stage_support, stage_coefs) in [(&ls.support, &ls.coefficients), (&somp.support, &somp.coefficients)] {
        for (i, &atom) in stage_support.iter().enumerate() {
            let entry = summed.entry(atom).or_insert_with(|| vec![C64::new(0.0, 0.0); pilots]);
            for k in 0..pilots {
                entry[k] += stage_coefs[k][i];
            }
        }
    }
    let xi: Vec<usize> = summed
        .iter()
        .filter(|(_, v)| v.iter().map(|c| c.norm()).sum::<f64>() / pilots as f64 > NONZERO_FLOOR)
        .map(|(&a, _)| a)
        .collect();

    let mut weights = vec![0.0; xi.len()];
    if !xi.is_empty() {
        for k in 0..pilots {
            let det = least_squares(&dict.columns(k, &xi), &problem.y[k])?.solution;
            for (w, c) in weights.iter_mut().zip(det.iter()) {
                *w += c.norm() / pilots as f64;
            }
        }
    }
    let support = top_atoms(&xi, &weights, params.support_size());

    let mut diagnostics = Diagnostics {
        iterations: somp.iterations,
        search_evaluations: somp.evaluations,
        converged: true,
        ..Default::default()
    };
    if somp.stalled {
        diagnostics.notes.push(format!("SOMP stalled after {} iterations", somp.iterations));
    }
    let mut result = finish(problem, support, params, diagnostics)?;
    result.diagnostics.runtime_s = start.elapsed().as_secs_f64();
    Ok(result)
}

/// SOMP over the level-1 dictionaries, then hierarchical refinement of the
/// selected cells.
pub fn gsomp_estimate(problem: &SensingProblem, params: &EstimatorParams) -> Result<EstimateResult, EstimatorError> {
    params.validate()?;
    let start = Instant::now();
    let flat = FlatDictionary(&problem.coarse);
    let somp = mmv_cs_somp(&problem.y, &flat, somp_tolerance(problem, params), params.somp_iterations())?;
    let (support, evaluations, early) = enhance_resolution(problem, &somp.support, params.support_size())?;
    let mut support = support;
    support.sort_unstable();
    let mut diagnostics = Diagnostics {
        iterations: somp.iterations,
        search_evaluations: somp.evaluations + evaluations,
        converged: true,
        ..Default::default()
    };
    if early {
        diagnostics.notes.push(format!("only {} level-1 cells available for refinement", somp.support.len()));
    }
    let mut result = finish(problem, support, params, diagnostics)?;
    result.diagnostics.runtime_s = start.elapsed().as_secs_f64();
    Ok(result)
}
