//! Path coefficient / delay refinement and channel reconstruction.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{ChannelEstimate, EstimatorError, PathGains, SensingProblem};
use crate::channel::SystemConfig;
use crate::codebook::AngleTuple;
use crate::numerics::{least_squares, CVector, C64};

/// Refined description of one estimated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedPath {
    /// α̂′
    pub gain: C64,
    /// ẑ, ideally e^{−j2π(B/K_o)τ}.
    pub generator: C64,
    /// τ̂ = −K_o/(2πB)·∠ẑ
    pub delay_s: f64,
}

impl RefinedPath {
    /// √(N_rN_t)·α̂′/(1+Δ/f_c)·ẑ^x with x = k − (K_o+1)/2.
    pub fn coefficient(&self, x: f64, delta: f64, sys: &SystemConfig) -> C64 {
        sys.array_gain() * self.gain / (1.0 + delta / sys.carrier_hz) * generator_power(self.generator, x)
    }
}

/// ẑ^x on the principal branch (x may be half-integer).
fn generator_power(z: C64, x: f64) -> C64 {
    if z == C64::new(0.0, 0.0) {
        return C64::new(0.0, 0.0);
    }
    C64::from_polar(z.norm().powf(x), z.arg() * x)
}

pub struct RefineOutput {
    pub coefficients: Vec<CVector>,
    pub estimate: ChannelEstimate,
    pub residual_power: f64,
    pub notes: Vec<String>,
}

/// Fits q̂_k on the given atoms, then (if `enabled` and K_p ≥ 2) replaces the
/// per-pilot gains with the (α̂′, ẑ) model valid on every subcarrier.
pub fn refine(
    problem: &SensingProblem,
    angles: &[AngleTuple],
    enabled: bool,
    disambiguate: bool,
) -> Result<RefineOutput, EstimatorError> {
    let sys = problem.sys;
    let subcarriers: Vec<usize> = problem.obs.beams.iter().map(|b| b.subcarrier).collect();
    let mut coefficients = Vec::with_capacity(problem.pilots());
    let mut residual_power = 0.0;
    for k in 0..problem.pilots() {
        let a = problem.angle_columns(k, angles);
        let q = least_squares(&a, &problem.y[k])?.solution;
        residual_power += (&problem.y[k] - &a * &q).norm_squared();
        coefficients.push(q);
    }
    let mut notes = Vec::new();
    let gains = if !enabled || problem.pilots() < 2 || angles.is_empty() {
        if enabled && problem.pilots() < 2 {
            notes.push("single pilot subcarrier: per-subcarrier LS reconstruction".to_string());
        }
        PathGains::PerPilot { subcarriers: subcarriers.clone(), coefficients: coefficients.clone() }
    } else {
        let paths = (0..angles.len())
            .map(|l| {
                let p: Vec<C64> = coefficients.iter().map(|q| q[l]).collect();
                fit_path(sys, &subcarriers, &p, disambiguate, &mut notes)
            })
            .collect();
        PathGains::Refined(paths)
    };
    let estimate = ChannelEstimate { angles: angles.to_vec(), gains, spatial_wideband: true };
    Ok(RefineOutput { coefficients, estimate, residual_power, notes })
}

/// Generator from δ-th roots of squint-corrected consecutive-pilot ratios,
/// then the 1-D LS fit of α̂′.
fn fit_path(
    sys: &SystemConfig,
    subcarriers: &[usize],
    p: &[C64],
    disambiguate: bool,
    notes: &mut Vec<String>,
) -> RefinedPath {
    let fc = sys.carrier_hz;
    let corrected: Vec<C64> = subcarriers
        .iter()
        .zip(p)
        .map(|(&k, &g)| g * (1.0 + sys.subcarrier_offset(k) / fc))
        .collect();
    let floor = 1e-12 * p.iter().map(|g| g.norm()).fold(0.0, f64::max);
    let mut sum = C64::new(0.0, 0.0);
    let mut used = 0usize;
    for i in 1..subcarriers.len() {
        if corrected[i - 1].norm() <= floor || p[i - 1].norm() <= floor {
            continue;
        }
        let ratio = corrected[i] / corrected[i - 1];
        let gap = (subcarriers[i] - subcarriers[i - 1]) as f64;
        sum += C64::from_polar(ratio.norm().powf(1.0 / gap), ratio.arg() / gap);
        used += 1;
    }
    let mut generator = if used > 0 { sum / used as f64 } else { C64::new(0.0, 0.0) };
    if used < subcarriers.len() - 1 {
        notes.push(format!("skipped {} degenerate gain ratios", subcarriers.len() - 1 - used));
    }
    if generator == C64::new(0.0, 0.0) {
        generator = C64::new(1.0, 0.0);
        notes.push("generator estimate vanished; assuming zero delay".to_string());
    }

    let fit = |z: C64| {
        let c: Vec<C64> = subcarriers
            .iter()
            .map(|&k| {
                let x = k as f64 - (sys.subcarriers as f64 + 1.0) / 2.0;
                sys.array_gain() / (1.0 + sys.subcarrier_offset(k) / fc) * generator_power(z, x)
            })
            .collect();
        let cc: f64 = c.iter().map(|v| v.norm_sqr()).sum();
        let gain = if cc > 0.0 { c.iter().zip(p).map(|(ci, pi)| ci.conj() * pi).sum::<C64>() / cc } else { C64::new(0.0, 0.0) };
        let resid: f64 = c.iter().zip(p).map(|(ci, pi)| (pi - ci * gain).norm_sqr()).sum();
        (gain, resid)
    };

    if disambiguate && subcarriers.len() >= 2 {
        let spacing = subcarriers[1] - subcarriers[0];
        let mut best = (generator, fit(generator));
        for m in 1..spacing {
            let z = generator * C64::from_polar(1.0, 2.0 * PI * m as f64 / spacing as f64);
            let f = fit(z);
            if f.1 < best.1 .1 {
                best = (z, f);
            }
        }
        generator = best.0;
    }
    let (gain, _) = fit(generator);
    let delay_s = -(sys.subcarriers as f64) / (2.0 * PI * sys.bandwidth_hz) * generator.arg();
    RefinedPath { gain, generator, delay_s }
}
