//! Synthetic paired corpus: clean sources, reverberation, additive noise at
//! a drawn SNR, and crop batching for training.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::rng::{self, Rng};
use crate::{Error, Real, Result, Tensor};
#[allow(unused_imports)]
use num_traits::Float as _;

mod synth;

pub use synth::{
    convolve_same, decay_time, peak_normalize, schroeder_db, synth_clean, synth_noise, synth_rir, CleanKind, NoiseKind,
    CLEAN_PEAK, SAMPLE_RATE,
};

#[derive(Clone, Debug, PartialEq)]
pub enum RirSpec {
    None,
    Synthetic { t60_range: (f64, f64), length: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSpec {
    pub snr_db: (f64, f64),
    pub rir: RirSpec,
    /// One kind is drawn per item.
    pub noise: Vec<NoiseKind>,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            snr_db: (-10.0, 20.0),
            rir: RirSpec::Synthetic { t60_range: (0.1, 0.6), length: 4096 },
            noise: alloc::vec![NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble],
        }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.snr_db;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("invalid snr range {:?}", self.snr_db)));
        }
        if let RirSpec::Synthetic { t60_range: (a, b), length } = self.rir {
            if !(a > 0.0 && a <= b) || length == 0 {
                return Err(Error::Config(format!("invalid rir spec: t60 {a}..{b}, length {length}")));
            }
        }
        if self.noise.is_empty() {
            return Err(Error::Config("at least one noise kind is required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradationMeta {
    pub snr_db: f64,
    /// `None` without reverberation.
    pub t60: Option<f64>,
    pub noise: NoiseKind,
    /// Joint gain applied to keep the degraded peak at or below 1.
    pub rescale: f64,
}

pub struct Degraded {
    /// Clean reference after any joint rescale.
    pub clean: Vec<f64>,
    /// `clean * rir` under the same rescale; `degraded - reverberant` is the
    /// added noise.
    pub reverberant: Vec<f64>,
    pub degraded: Vec<f64>,
    pub meta: DegradationMeta,
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// `degraded = clean * rir + noise`, with the noise scaled so that the power
/// ratio of the reverberant signal to the noise is the drawn SNR. If the
/// result would clip, clean and degraded are scaled down together.
pub fn degrade(clean: &[f64], spec: &DegradationSpec, seed: u64) -> Result<Degraded> {
    spec.validate()?;
    if clean.is_empty() {
        return Err(Error::Input("empty clean signal".into()));
    }
    let mut rng = rng::seeded(seed);
    let snr_db = rng::uniform(&mut rng, spec.snr_db.0, spec.snr_db.1);
    let noise_kind = spec.noise[rng.random_range(0..spec.noise.len())];
    let (mut reverberant, t60) = match spec.rir {
        RirSpec::None => (clean.to_vec(), None),
        RirSpec::Synthetic { t60_range, length } => {
            let t60 = rng::uniform(&mut rng, t60_range.0, t60_range.1);
            let rir = synth_rir(t60, length, rng.random())?;
            (convolve_same(clean, &rir), Some(t60))
        }
    };
    let noise = synth_noise(noise_kind, clean.len(), &mut rng);
    let p_sig = power(&reverberant);
    if !(p_sig > 0.0) {
        return Err(Error::Input("clean signal has no energy".into()));
    }
    let gain = (p_sig / (power(&noise) * libm::pow(10.0, snr_db / 10.0))).sqrt();
    let mut degraded: Vec<f64> = reverberant.iter().zip(&noise).map(|(s, n)| s + gain * n).collect();
    let mut clean = clean.to_vec();
    let peak = degraded.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rescale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    if rescale != 1.0 {
        degraded.iter_mut().for_each(|v| *v *= rescale);
        clean.iter_mut().for_each(|v| *v *= rescale);
        reverberant.iter_mut().for_each(|v| *v *= rescale);
    }
    Ok(Degraded { clean, reverberant, degraded, meta: DegradationMeta { snr_db, t60, noise: noise_kind, rescale } })
}

/// One clean/degraded pair held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub clean: Vec<f32>,
    pub degraded: Vec<f32>,
}

/// Random aligned crops of `crop` samples from `clips`, zero-padded when a
/// clip is shorter. Returns `(clean, degraded)`, each `[batch, crop]`.
pub fn random_batch<T: Real>(clips: &[Clip], batch: usize, crop: usize, rng: &mut Rng) -> Result<(Tensor<T>, Tensor<T>)> {
    if clips.is_empty() || batch == 0 || crop == 0 {
        return Err(Error::Input("batching needs clips, a batch size and a crop length".into()));
    }
    let mut clean = Vec::with_capacity(batch * crop);
    let mut degraded = Vec::with_capacity(batch * crop);
    for _ in 0..batch {
        let clip = &clips[rng.random_range(0..clips.len())];
        let n = clip.clean.len().min(clip.degraded.len());
        let start = if n > crop { rng.random_range(0..=n - crop) } else { 0 };
        for i in start..start + crop {
            let (c, d) = if i < n { (clip.clean[i], clip.degraded[i]) } else { (0.0, 0.0) };
            clean.push(T::lit(c as f64));
            degraded.push(T::lit(d as f64));
        }
    }
    Ok((Tensor::new([batch, crop], clean)?, Tensor::new([batch, crop], degraded)?))
}
