//! Dual-wideband sub-THz channel synthesis.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::codebook::{upa_vector, AngleTuple, GridIndex, GridSpec, UpaSize};
use crate::numerics::{CMatrix, C64};

pub const SPEED_OF_LIGHT: f64 = 2.99792458e8;
/// Wave impedance of free space, Ω.
pub const FREE_SPACE_IMPEDANCE: f64 = 377.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("invalid system configuration: {0}")]
    Config(String),
    #[error("distance must be positive, got {0}")]
    Distance(f64),
    #[error("incidence angle {0} rad outside [0, π/2)")]
    Incidence(f64),
    #[error("path {0} has no physical record but the physical gain model was requested")]
    MissingPhysical(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GainModel {
    /// α(Δ) = α′/(1+Δ/f_c)
    #[default]
    Approximate,
    /// Spreading × absorption × reflection.
    Physical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AngleMode {
    #[default]
    OffGrid,
    /// Snap drawn angles to the finest hierarchical grid.
    OnGrid,
}

/// Molecular absorption coefficient κ_a(f) in 1/m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Absorption {
    Constant(f64),
    /// `(frequency Hz, κ_a)` pairs sorted by frequency; linear interpolation,
    /// held constant outside the table.
    Table(Vec<(f64, f64)>),
}

impl Default for Absorption {
    fn default() -> Self {
        Absorption::Constant(0.0)
    }
}

impl Absorption {
    pub fn coefficient(&self, f: f64) -> f64 {
        match self {
            Absorption::Constant(k) => *k,
            Absorption::Table(t) => {
                if t.is_empty() {
                    return 0.0;
                }
                if f <= t[0].0 {
                    return t[0].1;
                }
                for w in t.windows(2) {
                    let ((f0, k0), (f1, k1)) = (w[0], w[1]);
                    if f <= f1 {
                        return k0 + (k1 - k0) * (f - f0) / (f1 - f0);
                    }
                }
                t[t.len() - 1].1
            }
        }
    }
}

/// Ranges from which physical path records are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalScenario {
    pub distance_m: (f64, f64),
    pub incidence_rad: (f64, f64),
    pub roughness_m: f64,
    pub refractive_index: C64,
    /// Path 0 is the line-of-sight path (χ = 1).
    pub line_of_sight: bool,
}

impl Default for PhysicalScenario {
    fn default() -> Self {
        Self {
            distance_m: (10.0, 20.0),
            incidence_rad: (0.1, 1.4),
            roughness_m: 0.088e-3,
            refractive_index: C64::new(2.24, -0.025),
            line_of_sight: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub subcarriers: usize,
    pub rx: UpaSize,
    pub tx: UpaSize,
    /// Defaults to half the carrier wavelength.
    pub antenna_spacing_m: Option<f64>,
    pub paths: usize,
    pub common_paths: usize,
    /// Variance of α′; defaults to 1/L.
    pub gain_variance: Option<f64>,
    pub delay_min_s: f64,
    pub delay_max_s: f64,
    pub frame_duration_s: f64,
    pub subframe_duration_s: f64,
    #[serde(default)]
    pub gain_model: GainModel,
    #[serde(default)]
    pub angle_mode: AngleMode,
    #[serde(default)]
    pub absorption: Absorption,
    #[serde(default)]
    pub physical: Option<PhysicalScenario>,
}

impl SystemConfig {
    /// Table I parameters.
    pub fn paper() -> Self {
        Self {
            carrier_hz: 142e9,
            bandwidth_hz: 8e9,
            subcarriers: 1024,
            rx: UpaSize::new(16, 16),
            tx: UpaSize::new(4, 4),
            antenna_spacing_m: None,
            paths: 4,
            common_paths: 3,
            gain_variance: None,
            delay_min_s: 45e-9,
            delay_max_s: 55e-9,
            frame_duration_s: 10e-3,
            subframe_duration_s: 10e-6,
            gain_model: GainModel::Approximate,
            angle_mode: AngleMode::OffGrid,
            absorption: Absorption::Constant(0.0),
            physical: None,
        }
    }

    /// Reduced arrays and subcarriers for laptop-scale sweeps.
    pub fn desk() -> Self {
        Self {
            subcarriers: 128,
            rx: UpaSize::new(8, 8),
            tx: UpaSize::new(4, 4),
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let fail = |m: &str| Err(ChannelError::Config(m.to_string()));
        if !(self.carrier_hz > 0.0) {
            return fail("carrier frequency must be positive");
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz < 2.0 * self.carrier_hz) {
            return fail("bandwidth must satisfy 0 < B < 2 f_c");
        }
        if self.subcarriers < 2 {
            return fail("need at least two subcarriers");
        }
        if self.rx.total() == 0 || self.tx.total() == 0 {
            return fail("array sizes must be positive");
        }
        if self.paths == 0 || self.common_paths == 0 || self.common_paths > self.paths {
            return fail("require 1 <= L_cm <= L");
        }
        if !(self.delay_min_s >= 0.0 && self.delay_max_s >= self.delay_min_s) {
            return fail("delay window must satisfy 0 <= tau_min <= tau_max");
        }
        if matches!(self.gain_variance, Some(v) if !(v > 0.0)) {
            return fail("path gain variance must be positive");
        }
        if self.gain_model == GainModel::Physical && self.physical.is_none() {
            return fail("physical gain model needs a [physical] scenario");
        }
        Ok(())
    }

    /// Δ_k = (k − (K_o+1)/2)·B/K_o for 1-based `k`.
    pub fn subcarrier_offset(&self, k: usize) -> f64 {
        (k as f64 - (self.subcarriers as f64 + 1.0) / 2.0) * self.bandwidth_hz / self.subcarriers as f64
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn antenna_spacing(&self) -> f64 {
        self.antenna_spacing_m.unwrap_or(self.wavelength() / 2.0)
    }

    pub fn gain_variance(&self) -> f64 {
        self.gain_variance.unwrap_or(1.0 / self.paths as f64)
    }

    /// Array gain √(N_r N_t).
    pub fn array_gain(&self) -> f64 {
        ((self.rx.total() * self.tx.total()) as f64).sqrt()
    }
}

/// Physical loss parameters of one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalPath {
    pub distance_m: f64,
    pub incidence_rad: f64,
    pub roughness_m: f64,
    pub refractive_index: C64,
    pub line_of_sight: bool,
}

impl PhysicalPath {
    /// Material impedance Z = Z_o / n.
    pub fn impedance(&self) -> C64 {
        C64::from(FREE_SPACE_IMPEDANCE) / self.refractive_index
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPath {
    /// α′, the gain at Δ = 0.
    pub gain: C64,
    pub delay_s: f64,
    pub angles: AngleTuple,
    pub physical: Option<PhysicalPath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub frame: usize,
    pub paths: Vec<ChannelPath>,
    /// Finest-grid columns nearest to each path, sorted, no duplicates.
    pub support: Vec<usize>,
    pub gain_model: GainModel,
}

/// (c / (4π(f_c+Δ)D))²
pub fn spreading_loss(delta: f64, distance: f64, sys: &SystemConfig) -> Result<f64, ChannelError> {
    if !(distance > 0.0) {
        return Err(ChannelError::Distance(distance));
    }
    Ok((SPEED_OF_LIGHT / (4.0 * PI * (sys.carrier_hz + delta) * distance)).powi(2))
}

/// exp(−D·κ_a(f_c+Δ))
pub fn absorption_loss(delta: f64, distance: f64, kappa: impl Fn(f64) -> f64, fc: f64) -> f64 {
    (-distance * kappa(fc + delta)).exp()
}

/// Fresnel reflection with Gaussian-roughness attenuation.
pub fn reflection_coefficient(
    delta: f64,
    incidence: f64,
    impedance: impl Fn(f64) -> C64,
    roughness: f64,
    fc: f64,
) -> Result<C64, ChannelError> {
    if !(0.0..PI / 2.0).contains(&incidence) {
        return Err(ChannelError::Incidence(incidence));
    }
    let z = impedance(delta);
    let z0 = C64::from(FREE_SPACE_IMPEDANCE);
    let sin_r = z / z0 * incidence.sin();
    let cos_r = (C64::from(1.0) - sin_r * sin_r).sqrt();
    let cos_i = incidence.cos();
    let fresnel = (z * cos_i - z0 * cos_r) / (z * cos_i + z0 * cos_r);
    let rough = 4.0 * PI * (fc + delta) * roughness * cos_i / SPEED_OF_LIGHT;
    Ok(fresnel * (-0.5 * rough * rough).exp())
}

/// α(Δ) for one path.
pub fn path_coefficient(path: &ChannelPath, delta: f64, model: GainModel, sys: &SystemConfig) -> Result<C64, ChannelError> {
    match model {
        GainModel::Approximate => Ok(path.gain / (1.0 + delta / sys.carrier_hz)),
        GainModel::Physical => {
            let p = path.physical.as_ref().ok_or(ChannelError::MissingPhysical(0))?;
            let chi_sq = if p.line_of_sight {
                1.0
            } else {
                let z = p.impedance();
                reflection_coefficient(delta, p.incidence_rad, |_| z, p.roughness_m, sys.carrier_hz)?.norm_sqr()
            };
            let spread = spreading_loss(delta, p.distance_m, sys)?;
            let abs = absorption_loss(delta, p.distance_m, |f| sys.absorption.coefficient(f), sys.carrier_hz);
            let mag = (chi_sq * spread * abs).sqrt();
            Ok(C64::from_polar(mag, -2.0 * PI * sys.carrier_hz * path.delay_s))
        }
    }
}

/// H_k for 1-based subcarrier `k`.
pub fn channel_matrix(real: &ChannelRealization, k: usize, sys: &SystemConfig) -> Result<CMatrix, ChannelError> {
    let delta = sys.subcarrier_offset(k);
    let mut h = CMatrix::zeros(sys.rx.total(), sys.tx.total());
    let g = sys.array_gain();
    for (l, path) in real.paths.iter().enumerate() {
        let alpha = path_coefficient(path, delta, real.gain_model, sys).map_err(|e| match e {
            ChannelError::MissingPhysical(_) => ChannelError::MissingPhysical(l),
            other => other,
        })?;
        let coef = alpha * C64::from_polar(g, -2.0 * PI * delta * path.delay_s);
        let a = path.angles;
        let br = upa_vector(sys.rx, a.rx_h, a.rx_v, delta, sys.carrier_hz);
        let bt = upa_vector(sys.tx, a.tx_h, a.tx_v, delta, sys.carrier_hz);
        h.ger(coef, &br, &bt.conjugate(), C64::from(1.0));
    }
    Ok(h)
}

/// Draws frames and evolves them.
#[derive(Debug, Clone)]
pub struct ChannelGenerator {
    pub sys: SystemConfig,
    pub grid: GridSpec,
}

impl ChannelGenerator {
    pub fn new(sys: SystemConfig, grid: GridSpec) -> Result<Self, ChannelError> {
        sys.validate()?;
        Ok(Self { sys, grid })
    }

    fn draw_angles<R: Rng + ?Sized>(&self, rng: &mut R) -> AngleTuple {
        let mut one = || {
            let polar = rng.random_range(-PI / 2.0..PI / 2.0);
            let azimuth = rng.random_range(-PI..PI);
            let h = crate::codebook::wrap_angle(0.5 * azimuth.cos() * polar.sin());
            let v = crate::codebook::wrap_angle(0.5 * azimuth.sin() * polar.sin());
            (h, v)
        };
        let (tx_h, tx_v) = one();
        let (rx_h, rx_v) = one();
        let a = AngleTuple { tx_h, tx_v, rx_h, rx_v };
        match self.sys.angle_mode {
            AngleMode::OffGrid => a,
            AngleMode::OnGrid => {
                GridIndex::nearest(&a, &self.grid, self.grid.levels).angles(&self.grid, self.grid.levels)
            }
        }
    }

    fn draw_path<R: Rng + ?Sized>(&self, rng: &mut R, line_of_sight: bool) -> ChannelPath {
        let std = (self.sys.gain_variance() / 2.0).sqrt();
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        let delay_s = if self.sys.delay_max_s > self.sys.delay_min_s {
            rng.random_range(self.sys.delay_min_s..self.sys.delay_max_s)
        } else {
            self.sys.delay_min_s
        };
        let angles = self.draw_angles(rng);
        let physical = self.sys.physical.as_ref().map(|s| PhysicalPath {
            distance_m: uniform(rng, s.distance_m),
            incidence_rad: uniform(rng, s.incidence_rad),
            roughness_m: s.roughness_m,
            refractive_index: s.refractive_index,
            line_of_sight: line_of_sight && s.line_of_sight,
        });
        ChannelPath { gain: C64::new(re * std, im * std), delay_s, angles, physical }
    }

    /// Nearest finest-grid column of each path, sorted and deduplicated.
    pub fn support_of(&self, paths: &[ChannelPath]) -> Vec<usize> {
        let level = self.grid.levels;
        let mut s: Vec<usize> = paths
            .iter()
            .map(|p| GridIndex::nearest(&p.angles, &self.grid, level).flat(&self.grid, level))
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Whether `candidate` would collide with an existing on-grid path.
    fn collides(&self, paths: &[ChannelPath], candidate: &ChannelPath) -> bool {
        self.sys.angle_mode == AngleMode::OnGrid && {
            let level = self.grid.levels;
            let j = GridIndex::nearest(&candidate.angles, &self.grid, level).flat(&self.grid, level);
            paths
                .iter()
                .any(|p| GridIndex::nearest(&p.angles, &self.grid, level).flat(&self.grid, level) == j)
        }
    }

    fn fresh_path<R: Rng + ?Sized>(&self, rng: &mut R, existing: &[ChannelPath], los: bool) -> ChannelPath {
        // On-grid draws are redrawn until they occupy a free grid cell.
        loop {
            let p = self.draw_path(rng, los);
            if !self.collides(existing, &p) {
                return p;
            }
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, frame: usize, rng: &mut R) -> ChannelRealization {
        let mut paths: Vec<ChannelPath> = Vec::with_capacity(self.sys.paths);
        for l in 0..self.sys.paths {
            let p = self.fresh_path(rng, &paths, l == 0);
            paths.push(p);
        }
        let support = self.support_of(&paths);
        ChannelRealization { frame, paths, support, gain_model: self.sys.gain_model }
    }

    /// Next frame: keeps a uniformly chosen set of L_cm paths untouched and
    /// redraws the rest from the priors.
    pub fn evolve<R: Rng + ?Sized>(&self, prev: &ChannelRealization, rng: &mut R) -> ChannelRealization {
        let l = prev.paths.len();
        let keep_n = self.sys.common_paths.min(l);
        let mut keep = vec![false; l];
        for i in sample(rng, l, keep_n).iter() {
            keep[i] = true;
        }
        let mut slots: Vec<Option<ChannelPath>> =
            prev.paths.iter().zip(&keep).map(|(p, &k)| k.then(|| p.clone())).collect();
        for i in 0..l {
            if slots[i].is_none() {
                let existing: Vec<ChannelPath> = slots.iter().flatten().cloned().collect();
                let los = prev.paths[i].physical.as_ref().is_some_and(|p| p.line_of_sight);
                slots[i] = Some(self.fresh_path(rng, &existing, los));
            }
        }
        let out: Vec<ChannelPath> = slots.into_iter().flatten().collect();
        let support = self.support_of(&out);
        ChannelRealization { frame: prev.frame + 1, paths: out, support, gain_model: prev.gain_model }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}
