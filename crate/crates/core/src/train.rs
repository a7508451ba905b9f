//! The two training paradigms behind one loop: bridge training (the network
//! sees a bridge state `x_t` and its time) and predictive mapping (the
//! network sees `y` directly and has no time input).

use alloc::format;
use alloc::vec::Vec;

use crate::backbone::{Backbone, BackboneConfig};
use crate::bridge::{draw_noise, sample_state, BridgeSchedule, NoiseConvention};
use crate::loss::{LossWeights, SpectralLoss};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::{self, Rng};
use crate::signal::{SpecTransform, StftConfig};
use crate::{Error, ParamStore, Real, Result, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Schrödinger bridge training with timestep conditioning.
    Sbm,
    /// Direct `y -> x` mapping without bridge sampling.
    Predictive,
}

impl Mode {
    pub fn uses_time(self) -> bool {
        self == Mode::Sbm
    }
}

/// Aligned waveforms, each `[B, N]`.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub clean: Tensor<T>,
    pub degraded: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub loss: f64,
    /// Unweighted loss terms.
    pub terms: [f64; 4],
    pub lr: f64,
    pub grad_norm: f64,
    /// Bridge times drawn for the batch; empty in predictive mode.
    pub t: Vec<f64>,
}

/// Everything a training run owns.
pub struct Trainer<T: Real> {
    pub mode: Mode,
    pub backbone: Backbone,
    pub store: ParamStore<T>,
    pub opt: AdamW<T>,
    pub loss: SpectralLoss<T>,
    pub sched: BridgeSchedule,
    pub convention: NoiseConvention,
    pub transform: SpecTransform,
    pub seed: u64,
    /// Forces every drawn `t` to this value (bridge mode only).
    pub t_override: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub mode: Mode,
    pub backbone: BackboneConfig,
    pub optimizer: AdamWConfig,
    pub loss: LossWeights,
    pub stft: StftConfig,
    pub sched: BridgeSchedule,
    pub convention: NoiseConvention,
    pub transform: SpecTransform,
    pub seed: u64,
}

impl<T: Real> Trainer<T> {
    /// Builds a freshly initialized model. Predictive mode forces the
    /// backbone's timestep conditioning off.
    pub fn new(cfg: TrainerConfig) -> Result<Self> {
        let mut bb = cfg.backbone.clone();
        bb.timestep = cfg.mode.uses_time();
        let mut store = ParamStore::new();
        let mut init_rng = rng::substream(cfg.seed, u64::MAX);
        let backbone = Backbone::new(bb, &mut store, &mut init_rng)?;
        Self::from_parts(cfg, backbone, store)
    }

    /// Wraps an existing model, e.g. one restored from a checkpoint.
    pub fn from_parts(cfg: TrainerConfig, backbone: Backbone, store: ParamStore<T>) -> Result<Self> {
        if backbone.cfg.timestep != cfg.mode.uses_time() {
            return Err(Error::Contract(format!(
                "{:?} training needs timestep conditioning {}",
                cfg.mode,
                if cfg.mode.uses_time() { "on" } else { "off" }
            )));
        }
        cfg.sched.validate()?;
        cfg.transform.validate()?;
        let opt = AdamW::new(cfg.optimizer, &store)?;
        let loss = SpectralLoss::new(cfg.loss, cfg.stft)?;
        Ok(Self {
            mode: cfg.mode,
            backbone,
            store,
            opt,
            loss,
            sched: cfg.sched,
            convention: cfg.convention,
            transform: cfg.transform,
            seed: cfg.seed,
            t_override: None,
        })
    }

    /// Number of updates applied so far.
    pub fn step_index(&self) -> usize {
        self.opt.step
    }

    fn planes(&self, wave: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.loss.main_stft().analyze(wave)?;
        Ok(self.transform.forward(&s)?.planes)
    }

    /// Network input and times for one batch.
    fn network_input(&self, x: &Tensor<T>, y: &Tensor<T>, rng: &mut Rng) -> Result<(Tensor<T>, Vec<f64>)> {
        match self.mode {
            Mode::Predictive => Ok((y.clone(), Vec::new())),
            Mode::Sbm => {
                let b = x.shape()[0];
                let item = x.numel() / b;
                let item_shape = &x.shape()[1..];
                let mut out = Vec::with_capacity(x.numel());
                let mut ts = Vec::with_capacity(b);
                for i in 0..b {
                    let t = match self.t_override {
                        Some(t) => t,
                        None => rng::uniform(rng, self.sched.t_eps, self.sched.t_max),
                    };
                    let slice = |v: &Tensor<T>| Tensor::new(item_shape.to_vec(), v.data()[i * item..(i + 1) * item].to_vec());
                    let z = draw_noise(item_shape, self.convention, rng);
                    let xt = sample_state(&slice(x)?, &slice(y)?, t, &z, &self.sched)?;
                    out.extend_from_slice(xt.data());
                    ts.push(t);
                }
                Ok((Tensor::new(x.shape().to_vec(), out)?, ts))
            }
        }
    }

    /// Loss of one batch with gradients accumulated into the store, without
    /// an optimizer update.
    pub fn forward_backward(&mut self, batch: &Batch<T>, rng: &mut Rng) -> Result<(f64, [f64; 4], Vec<f64>)> {
        if batch.clean.shape() != batch.degraded.shape() || batch.clean.rank() != 2 {
            return Err(Error::dim(
                "training batch",
                format!("clean {:?} vs degraded {:?}", batch.clean.shape(), batch.degraded.shape()),
            ));
        }
        let n = batch.clean.shape()[1];
        let x = self.planes(&batch.clean)?;
        let y = self.planes(&batch.degraded)?;
        let (input, ts) = self.network_input(&x, &y, rng)?;
        let mut tape = Tape::new();
        let target = tape.constant(x);
        let xin = tape.constant(input);
        let est = self.backbone.forward(&mut tape, &self.store, xin, &ts)?;
        let out = self.loss.compute(&mut tape, target, est, n)?;
        let loss = tape.value(out.total).item()?.as_f64();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss} at step {}", self.opt.step)));
        }
        self.store.zero_grad();
        tape.backward_into(out.total, &mut self.store)?;
        Ok((loss, out.terms, ts))
    }

    /// One update with randomness drawn from `rng`. On a non-finite loss or
    /// gradient the parameters are left untouched.
    pub fn step_with_rng(&mut self, batch: &Batch<T>, rng: &mut Rng) -> Result<StepOutput> {
        let (loss, terms, t) = self.forward_backward(batch, rng)?;
        let info = self.opt.update(&mut self.store)?;
        Ok(StepOutput { loss, terms, lr: info.lr, grad_norm: info.grad_norm, t })
    }

    /// One update using the per-step substream of the trainer seed, so that
    /// a resumed run draws the same randomness as an uninterrupted one.
    pub fn step(&mut self, batch: &Batch<T>) -> Result<StepOutput> {
        let mut rng = rng::substream(self.seed, self.opt.step as u64);
        self.step_with_rng(batch, &mut rng)
    }
}

/// Bridge-mode step: `t ~ U[t_eps, T]`, `x_t = sample_state(x, y, t, z)`,
/// loss against the clean spectrum, one update.
pub fn sb_training_step<T: Real>(trainer: &mut Trainer<T>, batch: &Batch<T>, rng: &mut Rng) -> Result<StepOutput> {
    if trainer.mode != Mode::Sbm {
        return Err(Error::Contract("sb_training_step needs a bridge-mode trainer".into()));
    }
    trainer.step_with_rng(batch, rng)
}

/// Predictive-mode step: the network maps `y` straight to the estimate.
pub fn predictive_training_step<T: Real>(trainer: &mut Trainer<T>, batch: &Batch<T>) -> Result<StepOutput> {
    if trainer.mode != Mode::Predictive {
        return Err(Error::Contract("predictive_training_step needs a predictive-mode trainer".into()));
    }
    let mut rng = rng::substream(trainer.seed, trainer.opt.step as u64);
    trainer.step_with_rng(batch, &mut rng)
}
