//! Signal-level evaluation metrics.

use alloc::format;
use alloc::vec::Vec;

use crate::signal::{Stft, StftConfig};
use crate::{Error, Result, Tensor};
#[allow(unused_imports)]
use num_traits::Float as _;

/// Scores are clamped to `[-SI_SDR_CAP, SI_SDR_CAP]` dB so that aggregates
/// stay finite.
pub const SI_SDR_CAP: f64 = 100.0;

/// Floor added to magnitudes in the log-spectral distance.
pub const LSD_EPS: f64 = 1e-8;

/// Scale-invariant signal-to-distortion ratio in dB.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Metric(format!("length mismatch: {} vs {}", reference.len(), estimate.len())));
    }
    let rr: f64 = reference.iter().map(|r| r * r).sum();
    if !(rr > 0.0) {
        return Err(Error::Metric("reference signal is zero".into()));
    }
    let re: f64 = reference.iter().zip(estimate).map(|(r, e)| r * e).sum();
    let alpha = re / rr;
    let (mut target, mut residual) = (0.0, 0.0);
    for (r, e) in reference.iter().zip(estimate) {
        let t = alpha * r;
        target += t * t;
        residual += (e - t) * (e - t);
    }
    // An estimate with no component along the reference scores the floor,
    // even when it is all zeros and the residual vanishes too.
    let db = if target == 0.0 {
        -SI_SDR_CAP
    } else if residual == 0.0 {
        SI_SDR_CAP
    } else {
        10.0 * libm::log10(target / residual)
    };
    Ok(db.clamp(-SI_SDR_CAP, SI_SDR_CAP))
}

/// Root-mean-square over bins and frames of
/// `20 |log10(|S_ref| + eps) - log10(|S_est| + eps)|`.
pub fn log_spectral_distance(reference: &[f64], estimate: &[f64], n_fft: usize, hop: usize) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Metric(format!("length mismatch: {} vs {}", reference.len(), estimate.len())));
    }
    if reference.is_empty() {
        return Err(Error::Metric("empty signals".into()));
    }
    let stft = Stft::<f64>::new(StftConfig::new(n_fft, hop, crate::data::SAMPLE_RATE)?)?;
    let n = reference.len();
    let spec = |x: &[f64]| -> Result<Vec<f64>> {
        let s = stft.analyze(&Tensor::new([1, n], x.to_vec())?)?;
        let plane = s.n_bins() * s.n_frames();
        let p = s.planes.data();
        Ok((0..plane).map(|i| p[i].hypot(p[plane + i])).collect())
    };
    let (a, b) = (spec(reference)?, spec(estimate)?);
    let mean_sq = a
        .iter()
        .zip(&b)
        .map(|(x, y)| {
            let d = 20.0 * (libm::log10(x + LSD_EPS) - libm::log10(y + LSD_EPS));
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    Ok(mean_sq.sqrt())
}
