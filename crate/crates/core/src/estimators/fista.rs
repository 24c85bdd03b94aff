//! Group-sparse FISTA estimator.

use std::collections::BTreeSet;
use std::time::Instant;

use super::{enhance_resolution, finish, Diagnostics, EstimateResult, EstimatorError, EstimatorParams, SensingProblem, NONZERO_FLOOR};
use crate::codebook::{DictionarySet, GridIndex};
use crate::numerics::{spectral_norm, CVector, NumericsError, C64};

/// Σ_{i<m} √(Σ_{g<n} |x(i + g·m)|²)
pub fn mixed_norm(x: &[C64], m: usize, n: usize) -> Result<f64, NumericsError> {
    if x.len() != m * n {
        return Err(NumericsError::ShapeMismatch { expected: m * n, got: x.len() });
    }
    Ok((0..m).map(|i| (0..n).map(|g| x[i + g * m].norm_sqr()).sum::<f64>().sqrt()).sum())
}

/// (v/‖v‖)·max(‖v‖ − θ, 0)
pub fn group_prox(v: &[C64], threshold: f64) -> Vec<C64> {
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 || !(norm > threshold) {
        return vec![C64::new(0.0, 0.0); v.len()];
    }
    let s = (norm - threshold) / norm;
    v.iter().map(|c| c * s).collect()
}

/// t_1 = 1, t_{u+1} = (1 + √(1 + 4t_u²))/2
pub fn momentum_sequence(n: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(n);
    let mut cur = 1.0f64;
    for _ in 0..n {
        t.push(cur);
        cur = (1.0 + (1.0 + 4.0 * cur * cur).sqrt()) / 2.0;
    }
    t
}

/// ½Σ_k‖y_k − Θ_k z_k‖² + Σ_j w_j‖(z_1[j], …, z_K[j])‖.
///
/// The variable is one coefficient vector per pilot; group j collects atom j
/// across pilots. Weights may be infinite (group forced to zero).
pub struct GroupLasso<'a> {
    pub dict: &'a DictionarySet,
    pub y: &'a [CVector],
    pub weights: Vec<f64>,
    /// η ≥ ‖Φ‖₂²
    pub lipschitz: f64,
}

impl<'a> GroupLasso<'a> {
    pub fn new(dict: &'a DictionarySet, y: &'a [CVector], weights: Vec<f64>) -> Self {
        // Φ is block diagonal in Θ_k = T_k ⊗ P_k, and ‖T ⊗ P‖₂ = ‖T‖₂‖P‖₂.
        let lipschitz = dict
            .pilots
            .iter()
            .map(|p| (spectral_norm(&p.tx_proj) * spectral_norm(&p.rx_proj)).powi(2))
            .fold(0.0, f64::max);
        Self { dict, y, weights, lipschitz }
    }

    pub fn zeros(&self) -> Vec<CVector> {
        vec![CVector::zeros(self.dict.columns()); self.y.len()]
    }

    fn residuals(&self, x: &[CVector]) -> Vec<CVector> {
        self.dict.pilots.iter().zip(x).zip(self.y).map(|((p, z), y)| p.apply(z) - y).collect()
    }

    pub fn smooth(&self, x: &[CVector]) -> f64 {
        0.5 * self.residuals(x).iter().map(|r| r.norm_squared()).sum::<f64>()
    }

    /// Φᴴ(Φx − y), blockwise.
    pub fn gradient(&self, x: &[CVector]) -> Vec<CVector> {
        self.dict.pilots.iter().zip(self.residuals(x)).map(|(p, r)| p.correlate(&r)).collect()
    }

    pub fn group_norms(&self, x: &[CVector]) -> Vec<f64> {
        (0..self.dict.columns()).map(|j| x.iter().map(|z| z[j].norm_sqr()).sum::<f64>().sqrt()).collect()
    }

    pub fn penalty(&self, x: &[CVector]) -> f64 {
        self.group_norms(x)
            .iter()
            .zip(&self.weights)
            .map(|(&n, &w)| if n == 0.0 { 0.0 } else { w * n })
            .sum()
    }

    pub fn objective(&self, x: &[CVector]) -> f64 {
        self.smooth(x) + self.penalty(x)
    }

    /// Proximal gradient step from `q` with step 1/η.
    pub fn step(&self, q: &[CVector]) -> Vec<CVector> {
        let grad = self.gradient(q);
        let inv = 1.0 / self.lipschitz;
        let v: Vec<CVector> = q.iter().zip(&grad).map(|(z, g)| z - g * C64::from(inv)).collect();
        let mut out = self.zeros();
        let mut group = vec![C64::new(0.0, 0.0); v.len()];
        for j in 0..self.dict.columns() {
            for (k, vk) in v.iter().enumerate() {
                group[k] = vk[j];
            }
            let shrunk = group_prox(&group, self.weights[j] * inv);
            for (k, s) in shrunk.into_iter().enumerate() {
                out[k][j] = s;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct FistaOutput {
    pub x: Vec<CVector>,
    pub iterations: usize,
    pub converged: bool,
    pub initial_objective: f64,
    pub final_objective: f64,
}

/// Accelerated proximal gradient; stops when the objective changes by at most
/// `tolerance`·F(x₀) or after `max_iterations`.
pub fn run_fista(problem: &GroupLasso, x0: Vec<CVector>, max_iterations: usize, tolerance: f64) -> FistaOutput {
    let initial_objective = problem.objective(&x0);
    let stop = tolerance * initial_objective;
    let mut q = x0.clone();
    let mut x_prev = x0;
    let mut f_prev = initial_objective;
    let mut t = 1.0f64;
    let mut eps = f64::INFINITY;
    let mut u = 1;
    while u < max_iterations && eps > stop {
        let x = problem.step(&q);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let w = C64::from((t - 1.0) / t_next);
        q = x.iter().zip(&x_prev).map(|(a, b)| a + (a - b) * w).collect();
        let f = problem.objective(&x);
        eps = (f - f_prev).abs();
        f_prev = f;
        x_prev = x;
        t = t_next;
        u += 1;
    }
    FistaOutput {
        x: x_prev,
        iterations: u - 1,
        converged: eps <= stop,
        initial_objective,
        final_objective: f_prev,
    }
}

/// Group-sparse LS-CS estimate: FISTA over the level-1 dictionaries with
/// lighter shrinkage on cells of the previous support, then hierarchical
/// resolution enhancement and refinement.
pub fn mfista_estimate(
    problem: &SensingProblem,
    prior: &[usize],
    params: &EstimatorParams,
) -> Result<EstimateResult, EstimatorError> {
    params.validate()?;
    let start = Instant::now();
    let finest = problem.finest();
    let gamma: BTreeSet<usize> = prior
        .iter()
        .map(|&a| GridIndex::from_flat(a, &problem.grid, finest).ancestor(&problem.grid, finest, 1).flat(&problem.grid, 1))
        .collect();

    let lambda = params.lambda.unwrap_or_else(|| {
        params.lambda_scale
            * problem.obs.noise_variance.sqrt()
            * ((problem.obs.streams() * problem.obs.subframes()) as f64).sqrt()
    });
    let split = |n: usize| if lambda == 0.0 { 0.0 } else { lambda / (n as f64).sqrt() };
    let new_paths = params.paths - params.common_paths;
    // Without a previous support every path is new; this only matters when L_cm = L.
    let lambda_cs = if gamma.is_empty() && new_paths == 0 { split(params.paths) } else { split(new_paths) };
    let lambda_ls = split(params.common_paths);
    let weights: Vec<f64> =
        (0..problem.coarse.columns()).map(|j| if gamma.contains(&j) { lambda_ls } else { lambda_cs }).collect();

    let lasso = GroupLasso::new(&problem.coarse, &problem.y, weights);
    let out = run_fista(&lasso, lasso.zeros(), params.fista_max_iterations, params.fista_tolerance);
    let pilots = problem.pilots() as f64;
    let xi1: Vec<usize> = (0..problem.coarse.columns())
        .filter(|&j| out.x.iter().map(|z| z[j].norm()).sum::<f64>() / pilots > NONZERO_FLOOR)
        .collect();

    let (mut support, evaluations, early) = enhance_resolution(problem, &xi1, params.support_size())?;
    support.sort_unstable();
    let mut diagnostics = Diagnostics {
        iterations: out.iterations,
        search_evaluations: evaluations,
        converged: out.converged,
        ..Default::default()
    };
    if !out.converged {
        diagnostics.notes.push(format!("FISTA hit the {}-iteration cap", params.fista_max_iterations));
    }
    if early {
        diagnostics.notes.push(format!("only {} nonzero level-1 groups for refinement", xi1.len()));
    }
    let mut result = finish(problem, support, params, diagnostics)?;
    result.diagnostics.runtime_s = start.elapsed().as_secs_f64();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn mixed_norm_cases() {
        let x = [c(3.0), c(0.0), c(4.0), c(0.0)];
        assert_relative_eq!(mixed_norm(&x, 2, 2).unwrap(), 5.0);
        let y = [c(1.0), c(-2.0), c(3.0)];
        assert_relative_eq!(mixed_norm(&y, 3, 1).unwrap(), 6.0);
        assert_relative_eq!(mixed_norm(&y, 1, 3).unwrap(), 14f64.sqrt());
        assert!(mixed_norm(&y, 2, 2).is_err());
    }

    #[test]
    fn prox_cases() {
        let out = group_prox(&[c(3.0), c(4.0)], 2.5);
        assert_relative_eq!(out[0].re, 1.5, epsilon = 1e-15);
        assert_relative_eq!(out[1].re, 2.0, epsilon = 1e-15);
        assert!(group_prox(&[c(3.0), c(4.0)], 5.0).iter().all(|v| v.norm() == 0.0));
        assert_eq!(group_prox(&[c(3.0), c(4.0)], 0.0), vec![c(3.0), c(4.0)]);
        assert!(group_prox(&[c(0.0)], 0.0)[0].norm() == 0.0);
        assert!(group_prox(&[c(1.0)], f64::INFINITY)[0].norm() == 0.0);
    }

    #[test]
    fn momentum_values() {
        let t = momentum_sequence(3);
        assert_relative_eq!(t[0], 1.0);
        assert_relative_eq!(t[1], 1.61803, epsilon = 1e-5);
        assert_relative_eq!(t[2], 2.19353, epsilon = 1e-5);
    }
}
