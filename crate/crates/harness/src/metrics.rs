//! NMSE and spectral efficiency.

use thiserror::Error;
use thz_core::numerics::{eig_hermitian, frobenius_sq, CMatrix, NumericsError, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("true channel has zero energy; NMSE is undefined")]
    ZeroChannel,
    #[error("{0} estimated and {1} true channel matrices")]
    CountMismatch(usize, usize),
    #[error("channel shapes differ: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("N_s = {0} exceeds min(N_r, N_t) = {1}")]
    Streams(usize, usize),
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

fn check(truth: &[CMatrix], est: &[CMatrix]) -> Result<(), MetricError> {
    if truth.len() != est.len() {
        return Err(MetricError::CountMismatch(est.len(), truth.len()));
    }
    for (h, e) in truth.iter().zip(est) {
        if h.shape() != e.shape() {
            return Err(MetricError::Shape(h.shape(), e.shape()));
        }
    }
    Ok(())
}

/// Σ‖H_k − Ĥ_k‖²_F / Σ‖H_k‖²_F over the given subcarriers.
pub fn nmse(truth: &[CMatrix], est: &[CMatrix]) -> Result<f64, MetricError> {
    check(truth, est)?;
    let num: f64 = truth.iter().zip(est).map(|(h, e)| frobenius_sq(&(h - e))).sum();
    let den: f64 = truth.iter().map(frobenius_sq).sum();
    if den == 0.0 {
        return Err(MetricError::ZeroChannel);
    }
    Ok(num / den)
}

/// Link parameters of the rate expression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSetup {
    pub transmit_power: f64,
    pub noise_variance: f64,
    pub streams: usize,
    pub bandwidth_hz: f64,
    /// ι = T_train / T_frame
    pub training_fraction: f64,
}

/// Leading `n` eigenvectors of a Hermitian matrix.
fn principal_directions(a: &CMatrix, n: usize) -> Result<CMatrix, MetricError> {
    let eig = eig_hermitian(a)?;
    Ok(eig.vectors.columns(0, n).into_owned())
}

/// (Ŵ, F̂): leading `n` eigenvectors of ĤĤᴴ and ĤᴴĤ. Only the smaller Gram
/// matrix is decomposed; the other side follows as Ĥv/σ unless a needed
/// singular value vanishes.
fn eigen_beams(h: &CMatrix, n: usize) -> Result<(CMatrix, CMatrix), MetricError> {
    let wide = h.nrows() < h.ncols();
    let g = if wide { h * h.adjoint() } else { h.ad_mul(h) };
    let eig = eig_hermitian(&g)?;
    let small = eig.vectors.columns(0, n).into_owned();
    let top = eig.values.first().copied().unwrap_or(0.0);
    let other = if top > 0.0 && eig.values[n - 1] > 1e-10 * top {
        let mut m = if wide { h.ad_mul(&small) } else { h * &small };
        for (i, mut col) in m.column_iter_mut().enumerate() {
            col /= C64::from(eig.values[i].sqrt());
        }
        m
    } else if wide {
        principal_directions(&h.ad_mul(h), n)?
    } else {
        principal_directions(&(h * h.adjoint()), n)?
    };
    Ok(if wide { (small, other) } else { (other, small) })
}

fn log2_det_hpd(a: &CMatrix) -> Option<f64> {
    let chol = a.clone().cholesky()?;
    Some(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>() / std::f64::consts::LN_2)
}

/// log₂det(I + (P_t/N_s)R⁻¹ŴᴴHF̂F̂ᴴHᴴŴ) for one subcarrier, with Ŵ/F̂ the
/// leading eigenvectors of ĤĤᴴ/ĤᴴĤ and R = σ²ŴᴴŴ. Returns the rate and
/// whether R had to be regularized.
pub fn subcarrier_rate(h: &CMatrix, h_est: &CMatrix, setup: &RateSetup) -> Result<(f64, bool), MetricError> {
    let n = setup.streams;
    let limit = h.nrows().min(h.ncols());
    if n > limit {
        return Err(MetricError::Streams(n, limit));
    }
    if setup.transmit_power == 0.0 {
        return Ok((0.0, false));
    }
    let (w, f) = eigen_beams(h_est, n)?;
    let mut r = w.ad_mul(&w) * C64::from(setup.noise_variance);
    let g = w.ad_mul(h) * &f;
    let signal = &g * g.adjoint() * C64::from(setup.transmit_power / n as f64);
    // det(I + R⁻¹S) = det(R + S)/det(R)
    let mut regularized = false;
    let mut log_r = log2_det_hpd(&r);
    if log_r.is_none() || setup.noise_variance == 0.0 {
        for i in 0..n {
            r[(i, i)] += C64::from(1e-12);
        }
        regularized = true;
        log_r = log2_det_hpd(&r);
    }
    let total = log2_det_hpd(&(&r + &signal));
    match (total, log_r) {
        (Some(t), Some(l)) => Ok(((t - l).max(0.0), regularized)),
        _ => Err(MetricError::NotPositiveDefinite),
    }
}

/// (ιR_train + (1−ι)R)/(B·N_s) in bit/s/Hz/stream. `truth` and `est` hold
/// every subcarrier in order; `pilots` are 1-based and excluded from R_train.
pub fn spectral_efficiency(
    truth: &[CMatrix],
    est: &[CMatrix],
    pilots: &[usize],
    setup: &RateSetup,
) -> Result<f64, MetricError> {
    check(truth, est)?;
    let per_tone = setup.bandwidth_hz / truth.len() as f64;
    let (mut all, mut train) = (0.0, 0.0);
    let mut regularized = 0;
    for (k, (h, e)) in truth.iter().zip(est).enumerate() {
        let (rate, reg) = subcarrier_rate(h, e, setup)?;
        regularized += reg as usize;
        all += per_tone * rate;
        if !pilots.contains(&(k + 1)) {
            train += per_tone * rate;
        }
    }
    if regularized > 0 {
        log::debug!("noise covariance regularized on {regularized} subcarriers");
    }
    let iota = setup.training_fraction;
    Ok((iota * train + (1.0 - iota) * all) / (setup.bandwidth_hz * setup.streams as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> CMatrix {
        CMatrix::from_element(1, 1, C64::new(v, 0.0))
    }

    #[test]
    fn nmse_cases() {
        let h = vec![CMatrix::from_fn(3, 2, |r, c| C64::new(r as f64 + 1.0, c as f64 - 0.5))];
        assert_eq!(nmse(&h, &h).unwrap(), 0.0);
        assert_relative_eq!(nmse(&h, &[CMatrix::zeros(3, 2)]).unwrap(), 1.0);
        assert_relative_eq!(nmse(&h, &[&h[0] * C64::from(2.0)]).unwrap(), 1.0);
        assert_eq!(nmse(&[CMatrix::zeros(1, 1)], &[scalar(1.0)]), Err(MetricError::ZeroChannel));
        assert!(nmse(&h, &[CMatrix::zeros(2, 2)]).is_err());
    }

    #[test]
    fn scalar_shannon() {
        let setup = RateSetup {
            transmit_power: 2.0,
            noise_variance: 0.5,
            streams: 1,
            bandwidth_hz: 1.0,
            training_fraction: 0.0,
        };
        let h = scalar(1.5);
        let se = spectral_efficiency(&[h.clone()], &[h], &[], &setup).unwrap();
        assert_relative_eq!(se, (1.0 + 2.0 * 2.25 / 0.5f64).log2(), max_relative = 1e-12);
    }

    #[test]
    fn zero_power_is_zero_rate() {
        let setup = RateSetup {
            transmit_power: 0.0,
            noise_variance: 1.0,
            streams: 1,
            bandwidth_hz: 1.0,
            training_fraction: 0.3,
        };
        assert_eq!(spectral_efficiency(&[scalar(1.0)], &[scalar(1.0)], &[1], &setup).unwrap(), 0.0);
    }

    #[test]
    fn training_overhead_weights_pilot_tones() {
        // Two tones of width B/2, pilot on tone 1: SE = (ι·r₂ + (1−ι)(r₁+r₂))·(B/2)/B
        let setup = RateSetup {
            transmit_power: 1.0,
            noise_variance: 1.0,
            streams: 1,
            bandwidth_hz: 2.0,
            training_fraction: 0.25,
        };
        let hs = [scalar(1.0), scalar(3.0)];
        let (r1, r2) = (2f64.log2(), 10f64.log2());
        let expect = (0.25 * r2 + 0.75 * (r1 + r2)) / 2.0;
        assert_relative_eq!(spectral_efficiency(&hs, &hs, &[1], &setup).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn eigen_beams_match_full_decompositions() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for (r, c) in [(6, 3), (3, 6), (4, 4)] {
            let h = CMatrix::from_fn(r, c, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            let (w, f) = eigen_beams(&h, 2).unwrap();
            let w_ref = principal_directions(&(&h * h.adjoint()), 2).unwrap();
            let f_ref = principal_directions(&h.ad_mul(&h), 2).unwrap();
            // same subspaces: projectors agree
            assert!((&w * w.adjoint() - &w_ref * w_ref.adjoint()).norm() < 1e-10);
            assert!((&f * f.adjoint() - &f_ref * f_ref.adjoint()).norm() < 1e-10);
        }
        // rank-deficient estimate falls back to the full decomposition
        let (w, _) = eigen_beams(&CMatrix::zeros(5, 3), 2).unwrap();
        assert!((w.ad_mul(&w) - CMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn too_many_streams() {
        let setup = RateSetup {
            transmit_power: 1.0,
            noise_variance: 1.0,
            streams: 2,
            bandwidth_hz: 1.0,
            training_fraction: 0.0,
        };
        assert!(matches!(subcarrier_rate(&scalar(1.0), &scalar(1.0), &setup), Err(MetricError::Streams(2, 1))));
    }
}
