//! Random-beamforming pilot training and noisy combined observations.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::channel::{channel_matrix, ChannelError, ChannelRealization, SystemConfig};
use crate::numerics::{frobenius_sq, CMatrix, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainingError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{what} = {value} is not divisible by {chains} RF chains")]
    Hybrid { what: &'static str, value: usize, chains: usize },
    #[error("channel produces no signal power; SNR is undefined")]
    ZeroSignal,
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfChains {
    pub rx: usize,
    pub tx: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Q_p combined streams.
    pub streams: usize,
    /// T_p pilot subframes.
    pub subframes: usize,
    /// K_p comb pilots.
    pub pilot_subcarriers: usize,
    /// Assemble W/X from analog blocks of this many RF chains.
    #[serde(default)]
    pub rf_chains: Option<RfChains>,
    /// Reuse one (W, X) draw on every pilot subcarrier.
    #[serde(default)]
    pub share_beams: bool,
}

impl TrainingConfig {
    pub fn desk() -> Self {
        Self { streams: 20, subframes: 20, pilot_subcarriers: 5, rf_chains: None, share_beams: false }
    }

    pub fn comb_spacing(&self, subcarriers: usize) -> usize {
        subcarriers.div_ceil(self.pilot_subcarriers)
    }

    /// 1-based pilot subcarriers {1 + (i−1)δ_p}.
    pub fn pilot_set(&self, subcarriers: usize) -> Vec<usize> {
        let d = self.comb_spacing(subcarriers);
        (0..self.pilot_subcarriers).map(|i| 1 + i * d).collect()
    }

    pub fn validate(&self, sys: &SystemConfig) -> Result<(), TrainingError> {
        let fail = |m: String| Err(TrainingError::Config(m));
        if self.streams == 0 || self.subframes == 0 {
            return fail("Q_p and T_p must be at least 1".into());
        }
        if self.pilot_subcarriers == 0 || self.pilot_subcarriers > sys.subcarriers {
            return fail(format!("K_p must lie in [1, {}]", sys.subcarriers));
        }
        if let Some(&last) = self.pilot_set(sys.subcarriers).last() {
            if last > sys.subcarriers {
                return fail(format!(
                    "comb with spacing {} overruns K_o = {}",
                    self.comb_spacing(sys.subcarriers),
                    sys.subcarriers
                ));
            }
        }
        if let Some(rf) = self.rf_chains {
            if rf.rx == 0 || self.streams % rf.rx != 0 {
                return Err(TrainingError::Hybrid { what: "Q_p", value: self.streams, chains: rf.rx });
            }
            if rf.tx == 0 || self.subframes % rf.tx != 0 {
                return Err(TrainingError::Hybrid { what: "T_p", value: self.subframes, chains: rf.tx });
            }
        }
        Ok(())
    }
}

/// Combiner W_k (N_r×Q_p) and pilot matrix X_k (N_t×T_p) of one pilot subcarrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotBeams {
    pub subcarrier: usize,
    pub combiner: CMatrix,
    pub pilot: CMatrix,
}

/// Constant-modulus entries e^{jη}/√rows, η ~ U(0, 2π).
fn random_phase_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    let scale = 1.0 / (rows as f64).sqrt();
    let mut m = CMatrix::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            m[(r, c)] = C64::from_polar(scale, rng.random_range(0.0..2.0 * PI));
        }
    }
    m
}

/// Concatenation of `blocks` analog blocks with identity baseband.
fn hybrid_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, chains: usize, rng: &mut R) -> CMatrix {
    let mut m = CMatrix::zeros(rows, cols);
    for b in 0..cols / chains {
        let analog = random_phase_matrix(rows, chains, rng);
        m.columns_mut(b * chains, chains).copy_from(&analog);
    }
    m
}

pub fn random_beams<R: Rng + ?Sized>(
    sys: &SystemConfig,
    train: &TrainingConfig,
    rng: &mut R,
) -> Result<Vec<PilotBeams>, TrainingError> {
    train.validate(sys)?;
    let (nr, nt) = (sys.rx.total(), sys.tx.total());
    let draw = |rng: &mut R| match train.rf_chains {
        Some(rf) => (
            hybrid_matrix(nr, train.streams, rf.rx, rng),
            hybrid_matrix(nt, train.subframes, rf.tx, rng),
        ),
        None => (random_phase_matrix(nr, train.streams, rng), random_phase_matrix(nt, train.subframes, rng)),
    };
    let shared = train.share_beams.then(|| draw(rng));
    Ok(train
        .pilot_set(sys.subcarriers)
        .into_iter()
        .map(|k| {
            let (combiner, pilot) = shared.clone().unwrap_or_else(|| draw(rng));
            PilotBeams { subcarrier: k, combiner, pilot }
        })
        .collect())
}

/// Combined pilot measurements of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub beams: Vec<PilotBeams>,
    /// Y_k (Q_p×T_p), aligned with `beams`.
    pub measurements: Vec<CMatrix>,
    pub noise_variance: f64,
    /// Realized signal-to-noise ratio in dB (infinite when noiseless).
    pub snr_db: f64,
}

impl Observation {
    pub fn subcarriers(&self) -> Vec<usize> {
        self.beams.iter().map(|b| b.subcarrier).collect()
    }

    pub fn streams(&self) -> usize {
        self.measurements.first().map_or(0, |y| y.nrows())
    }

    pub fn subframes(&self) -> usize {
        self.measurements.first().map_or(0, |y| y.ncols())
    }
}

/// Σ_k ‖W_kᴴ H_k X_k‖²
pub fn signal_power(real: &ChannelRealization, beams: &[PilotBeams], sys: &SystemConfig) -> Result<f64, TrainingError> {
    let mut p = 0.0;
    for b in beams {
        let h = channel_matrix(real, b.subcarrier, sys)?;
        p += frobenius_sq(&(b.combiner.ad_mul(&h) * &b.pilot));
    }
    Ok(p)
}

/// Σ_k T_p·tr(W_kᴴW_k): expected combined-noise power per unit σ_n².
pub fn noise_gain(beams: &[PilotBeams]) -> f64 {
    beams.iter().map(|b| b.pilot.ncols() as f64 * frobenius_sq(&b.combiner)).sum()
}

/// σ_n² that makes the expected SNR equal `target_db`.
pub fn calibrate_noise(
    target_db: f64,
    real: &ChannelRealization,
    beams: &[PilotBeams],
    sys: &SystemConfig,
) -> Result<f64, TrainingError> {
    let s = signal_power(real, beams, sys)?;
    if !(s > 0.0) {
        return Err(TrainingError::ZeroSignal);
    }
    Ok(s / (10f64.powf(target_db / 10.0) * noise_gain(beams)))
}

/// Y_k = W_kᴴ H_k X_k + W_kᴴ V_k with V_k i.i.d. CN(0, σ_n²).
pub fn observe<R: Rng + ?Sized>(
    real: &ChannelRealization,
    beams: &[PilotBeams],
    sys: &SystemConfig,
    noise_variance: f64,
    rng: &mut R,
) -> Result<Observation, TrainingError> {
    let std = (noise_variance / 2.0).sqrt();
    let mut measurements = Vec::with_capacity(beams.len());
    let (mut sig, mut noi) = (0.0, 0.0);
    for b in beams {
        let h = channel_matrix(real, b.subcarrier, sys)?;
        let clean = b.combiner.ad_mul(&h) * &b.pilot;
        sig += frobenius_sq(&clean);
        let y = if noise_variance > 0.0 {
            let v = CMatrix::from_fn(h.nrows(), b.pilot.ncols(), |_, _| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                C64::new(re * std, im * std)
            });
            let combined = b.combiner.ad_mul(&v);
            noi += frobenius_sq(&combined);
            clean + combined
        } else {
            clean
        };
        measurements.push(y);
    }
    let snr_db = if noi > 0.0 { 10.0 * (sig / noi).log10() } else { f64::INFINITY };
    Ok(Observation { beams: beams.to_vec(), measurements, noise_variance, snr_db })
}
