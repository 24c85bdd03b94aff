//! Greedy stages shared by the two-stage estimator and the GSOMP baseline.

use std::collections::BTreeSet;

use super::{AtomDictionary, EstimatorError};
use crate::numerics::{least_squares, CMatrix, CVector};

/// Output of the support-aided least-squares stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LsStage {
    /// Γ in pick order.
    pub support: Vec<usize>,
    /// [ẑ_k^{LS}]_Γ per pilot.
    pub coefficients: Vec<CVector>,
}

/// Greedily picks up to `common` atoms of `prior` minimizing the joint LS residual.
pub fn mmv_ls<D: AtomDictionary>(
    y: &[CVector],
    dict: &D,
    prior: &[usize],
    common: usize,
) -> Result<LsStage, EstimatorError> {
    let mut q: Vec<usize> = prior.to_vec();
    q.sort_unstable();
    q.dedup();
    if q.is_empty() || common == 0 {
        return Ok(LsStage { support: vec![], coefficients: vec![CVector::zeros(0); y.len()] });
    }
    let cols: Vec<CMatrix> = (0..y.len()).map(|k| dict.columns(k, &q)).collect();

    let mut chosen: Vec<usize> = Vec::new(); // positions into q
    while chosen.len() < common.min(q.len()) {
        let mut best: Option<(usize, f64)> = None;
        for pos in 0..q.len() {
            if chosen.contains(&pos) {
                continue;
            }
            let mut trial = chosen.clone();
            trial.push(pos);
            let mut cost = 0.0;
            for (k, yk) in y.iter().enumerate() {
                let a = cols[k].select_columns(&trial);
                let ls = least_squares(&a, yk)?;
                cost += (yk - a * ls.solution).norm_squared();
            }
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some((pos, cost));
            }
        }
        match best {
            Some((pos, _)) => chosen.push(pos),
            None => break,
        }
    }
    let mut coefficients = Vec::with_capacity(y.len());
    for (k, yk) in y.iter().enumerate() {
        coefficients.push(least_squares(&cols[k].select_columns(&chosen), yk)?.solution);
    }
    Ok(LsStage { support: chosen.iter().map(|&p| q[p]).collect(), coefficients })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SompOutput {
    /// Υ in pick order.
    pub support: Vec<usize>,
    /// [ẑ_k^{CS}]_Υ per pilot.
    pub coefficients: Vec<CVector>,
    /// Final residuals r_k.
    pub residuals: Vec<CVector>,
    pub iterations: usize,
    /// Stopped because no atom had a nonzero correlation with the residual.
    pub stalled: bool,
    pub evaluations: usize,
}

/// Simultaneous OMP with joint LS refit; stops when the mean residual change
/// drops to `tolerance`, after `max_iterations`, or on a stall.
pub fn mmv_cs_somp<D: AtomDictionary>(
    y: &[CVector],
    dict: &D,
    tolerance: f64,
    max_iterations: usize,
) -> Result<SompOutput, EstimatorError> {
    let pilots = y.len();
    let mut support: Vec<usize> = Vec::new();
    let mut picked = BTreeSet::new();
    let mut mats: Vec<CMatrix> = y.iter().map(|v| CMatrix::zeros(v.len(), 0)).collect();
    let mut coefficients = vec![CVector::zeros(0); pilots];
    let mut residuals: Vec<CVector> = y.to_vec();
    let mut change = f64::INFINITY;
    let mut evaluations = 0;
    let mut stalled = false;
    let mut t = 0;
    while change > tolerance && t < max_iterations {
        let Some((atom, evals)) = dict.select(&residuals, &picked) else {
            stalled = true;
            break;
        };
        evaluations += evals;
        support.push(atom);
        picked.insert(atom);
        let mut total = 0.0;
        for k in 0..pilots {
            let n = mats[k].ncols();
            let col = dict.column(k, atom);
            mats[k] = std::mem::replace(&mut mats[k], CMatrix::zeros(0, 0)).insert_column(n, Default::default());
            mats[k].set_column(n, &col);
            let g = least_squares(&mats[k], &y[k])?.solution;
            let r = &y[k] - &mats[k] * &g;
            total += (&r - &residuals[k]).norm_squared();
            residuals[k] = r;
            coefficients[k] = g;
        }
        change = total / pilots as f64;
        t += 1;
    }
    if stalled {
        log::debug!("SOMP stalled after {t} iterations: residual uncorrelated with every atom");
    }
    Ok(SompOutput { support, coefficients, residuals, iterations: t, stalled, evaluations })
}
