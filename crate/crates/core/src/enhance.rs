//! Waveform-in, waveform-out enhancement with a trained backbone.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::backbone::Backbone;
use crate::bridge::{iterative_sample, one_step_enhance, BridgeSchedule, SamplerConfig};
use crate::rng::Rng;
use crate::signal::{SpecTransform, Stft};
use crate::{Error, ParamStore, Real, Result, Tensor};
#[allow(unused_imports)]
use num_traits::Float as _;

/// How the clean spectrum is produced from the degraded one.
#[derive(Clone, Copy, Debug)]
pub enum Inference {
    /// A single network call at `t = T`.
    OneStep,
    /// Reverse-time sampling with the given number of steps.
    Iterative(SamplerConfig),
}

impl Inference {
    pub fn steps(&self) -> usize {
        match self {
            Inference::OneStep => 1,
            Inference::Iterative(c) => c.n_steps,
        }
    }
}

/// Root-mean-square level used to normalize a clip, or 1 for silence.
pub fn rms_scale(x: &[f64]) -> f64 {
    let p = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    if p > 0.0 {
        p.sqrt()
    } else {
        1.0
    }
}

/// Divides each clean/degraded row pair of a `[B, N]` batch by the RMS of
/// its degraded row.
pub fn normalize_rows<T: Real>(clean: &mut Tensor<T>, degraded: &mut Tensor<T>) -> Result<()> {
    if clean.shape() != degraded.shape() || clean.rank() != 2 {
        return Err(Error::dim("normalize_rows", format!("{:?} vs {:?}", clean.shape(), degraded.shape())));
    }
    let n = clean.shape()[1];
    if n == 0 {
        return Ok(());
    }
    for (c, d) in clean.data_mut().chunks_mut(n).zip(degraded.data_mut().chunks_mut(n)) {
        let row: Vec<f64> = d.iter().map(|v| v.as_f64()).collect();
        let inv = T::lit(1.0 / rms_scale(&row));
        c.iter_mut().for_each(|v| *v = *v * inv);
        d.iter_mut().for_each(|v| *v = *v * inv);
    }
    Ok(())
}

/// Everything needed to run a trained network on raw audio.
pub struct Enhancer<'a, T: Real> {
    pub backbone: &'a Backbone,
    pub store: &'a ParamStore<T>,
    pub stft: Stft<T>,
    pub transform: SpecTransform,
    pub sched: BridgeSchedule,
    /// Scale the input to unit RMS before the network and undo it after.
    pub normalize: bool,
}

impl<T: Real> Enhancer<'_, T> {
    /// Enhances one clip. Returns the waveform and the number of network
    /// evaluations.
    pub fn run(&self, wave: &[f64], how: &Inference, rng: &mut Rng) -> Result<(Vec<f64>, usize)> {
        if wave.is_empty() || wave.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("enhancement input must be non-empty and finite".into()));
        }
        let timed = self.backbone.cfg.timestep;
        if !timed && how.steps() > 1 {
            return Err(Error::Contract(format!(
                "a model without timestep conditioning supports one step only, {} requested",
                how.steps()
            )));
        }
        let scale = if self.normalize { rms_scale(wave) } else { 1.0 };
        let n = wave.len();
        let input = Tensor::new([1, n], wave.iter().map(|v| T::lit(v / scale)).collect())?;
        let spec = self.transform.forward(&self.stft.analyze(&input)?)?;
        let model = |x: &Tensor<T>, t: f64| {
            let ts = if timed { vec![t] } else { Vec::new() };
            self.backbone.predict(self.store, x, &ts)
        };
        let (planes, nfe) = match how {
            Inference::OneStep => (one_step_enhance(&spec.planes, model, &self.sched)?, 1),
            Inference::Iterative(cfg) => iterative_sample(&spec.planes, model, cfg, &self.sched, rng)?,
        };
        let out = self.stft.synthesize(&self.transform.inverse(&spec.with_planes(planes)?)?)?;
        let out: Vec<f64> = out.data().iter().map(|v| v.as_f64() * scale).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("enhanced waveform".into()));
        }
        Ok((out, nfe))
    }
}
