//! Genie-aided least squares with the true path angles.

use std::time::Instant;

use super::{ChannelEstimate, Diagnostics, EstimateResult, EstimatorError, PathGains, SensingProblem};
use crate::codebook::{equivalent_vector, AngleTuple, GridIndex};
use crate::numerics::{least_squares, CMatrix};

/// Per-pilot LS on the true angles. With `spatial_wideband` off, both the
/// sensing columns and the reconstruction use squint-free (Δ = 0) steering
/// vectors.
pub fn genie_ls(
    problem: &SensingProblem,
    truth: &[AngleTuple],
    spatial_wideband: bool,
) -> Result<EstimateResult, EstimatorError> {
    let start = Instant::now();
    let mut coefficients = Vec::with_capacity(problem.pilots());
    let mut residual_power = 0.0;
    for k in 0..problem.pilots() {
        let a = if spatial_wideband {
            problem.angle_columns(k, truth)
        } else {
            let mut m = CMatrix::zeros(problem.y[k].len(), truth.len());
            for (c, ang) in truth.iter().enumerate() {
                m.set_column(c, &equivalent_vector(problem.sys, &problem.obs.beams[k], ang, 0.0));
            }
            m
        };
        let q = least_squares(&a, &problem.y[k])?.solution;
        residual_power += (&problem.y[k] - &a * &q).norm_squared();
        coefficients.push(q);
    }
    let finest = problem.finest();
    let mut support: Vec<usize> =
        truth.iter().map(|a| GridIndex::nearest(a, &problem.grid, finest).flat(&problem.grid, finest)).collect();
    support.sort_unstable();
    support.dedup();
    let measured = problem.measurement_power();
    let diagnostics = Diagnostics {
        converged: true,
        residual_power,
        residual_ratio: if measured > 0.0 { residual_power / measured } else { 0.0 },
        runtime_s: start.elapsed().as_secs_f64(),
        ..Default::default()
    };
    let estimate = ChannelEstimate {
        angles: truth.to_vec(),
        gains: PathGains::PerPilot { subcarriers: problem.obs.subcarriers(), coefficients: coefficients.clone() },
        spatial_wideband,
    };
    Ok(EstimateResult { support, coefficients, estimate, diagnostics })
}
