//! Sequential hierarchical angle search.

use std::collections::BTreeSet;

use super::{correlation_scores, EstimatorError, SensingProblem};
use crate::codebook::{grid_angle, steering_vector, GridIndex};
use crate::numerics::{kron_vec, least_squares, unvectorize, CMatrix, CVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOutcome {
    /// Finest-level grid point.
    pub index: GridIndex,
    /// Candidate tuples scored during refinement (excluding the coarse stage).
    pub evaluations: usize,
}

/// Refines a level-1 cell to the finest grid one angle dimension at a time
/// (h-AOD, v-AOD, h-AOA, v-AOA per level), maximizing Σ_k|u_kᴴ r_k|².
pub fn sequential_search(problem: &SensingProblem, residuals: &[CVector], start: GridIndex) -> SearchOutcome {
    let sys = problem.sys;
    let grid = problem.grid;
    let subs = grid.subs();
    // u_kᴴ r_k = b_rᴴ (W_k R_k X_kᴴ) b_t, so fold the beams into one matrix per pilot.
    let folded: Vec<CMatrix> = problem
        .obs
        .beams
        .iter()
        .zip(residuals)
        .map(|(b, r)| {
            let rm = unvectorize(r, b.combiner.ncols(), b.pilot.ncols()).expect("residual length");
            &b.combiner * rm * b.pilot.adjoint()
        })
        .collect();

    let mut idx = start.as_array();
    let mut lvl = [1usize; 4];
    let mut evaluations = 0;
    let angle = |i: usize, l: usize, d: usize| grid_angle(i, subs[d].pow(l as u32));
    let fc = sys.carrier_hz;

    for m in 2..=grid.levels {
        for d in 0..4 {
            let mut best: Option<(usize, f64)> = None;
            for a in 0..subs[d] {
                let cand = idx[d] * subs[d] + a;
                let mut psi = [0.0; 4];
                for e in 0..4 {
                    psi[e] = if e == d { angle(cand, m, e) } else { angle(idx[e], lvl[e], e) };
                }
                let mut score = 0.0;
                for (k, mk) in folded.iter().enumerate() {
                    let delta = problem.deltas[k];
                    let bt = kron_vec(
                        &steering_vector(sys.tx.horizontal, psi[0], delta, fc),
                        &steering_vector(sys.tx.vertical, psi[1], delta, fc),
                    );
                    let br = kron_vec(
                        &steering_vector(sys.rx.horizontal, psi[2], delta, fc),
                        &steering_vector(sys.rx.vertical, psi[3], delta, fc),
                    );
                    score += br.dotc(&(mk * bt)).norm_sqr();
                }
                evaluations += 1;
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((cand, score));
                }
            }
            idx[d] = best.expect("sub-codebook is non-empty").0;
            lvl[d] = m;
        }
    }
    SearchOutcome { index: GridIndex::from_array(idx), evaluations }
}

/// Resolution enhancement: repeatedly takes the best remaining level-1
/// candidate against the current residual, refines it to the finest grid and
/// refits, until `target` candidates are consumed. Returns finest-level atoms,
/// the evaluation count and whether the candidates ran out early.
pub fn enhance_resolution(
    problem: &SensingProblem,
    candidates: &[usize],
    target: usize,
) -> Result<(Vec<usize>, usize, bool), EstimatorError> {
    let finest = problem.finest();
    let mut used = BTreeSet::new();
    let mut atoms: Vec<usize> = Vec::new();
    let mut mats: Vec<CMatrix> = problem.y.iter().map(|v| CMatrix::zeros(v.len(), 0)).collect();
    let mut residuals = problem.y.clone();
    let mut evaluations = 0;
    let pool: BTreeSet<usize> = candidates.iter().copied().collect();
    while used.len() < target {
        let scores = correlation_scores(&problem.coarse, &residuals);
        let mut best: Option<(usize, f64)> = None;
        for &j in pool.difference(&used) {
            evaluations += 1;
            if best.is_none_or(|(_, s)| scores[j] > s) {
                best = Some((j, scores[j]));
            }
        }
        let Some((j1, _)) = best else {
            log::debug!("resolution enhancement ran out of candidates at {}/{target}", used.len());
            return Ok((atoms, evaluations, true));
        };
        used.insert(j1);
        let found = sequential_search(problem, &residuals, GridIndex::from_flat(j1, &problem.grid, 1));
        evaluations += found.evaluations;
        let atom = found.index.flat(&problem.grid, finest);
        if atoms.contains(&atom) {
            continue;
        }
        atoms.push(atom);
        let angles = problem.atom_angles(atom);
        for k in 0..mats.len() {
            let n = mats[k].ncols();
            mats[k] = std::mem::replace(&mut mats[k], CMatrix::zeros(0, 0)).insert_column(n, Default::default());
            mats[k].set_column(n, &problem.angle_column(k, &angles));
            let g = least_squares(&mats[k], &problem.y[k])?.solution;
            residuals[k] = &problem.y[k] - &mats[k] * g;
        }
    }
    Ok((atoms, evaluations, false))
}
