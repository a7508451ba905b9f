//! AdamW with linear warmup and cosine decay.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, ParamStore, Real, Result};
#[allow(unused_imports)]
use num_traits::Float as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LrSchedule {
    /// Linear warmup to `lr_base`, then half-cosine to zero at `total_steps`.
    #[default]
    WarmupCosine,
    Constant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr_base: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub schedule: LrSchedule,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr_base: 3e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 100,
            total_steps: 2000,
            clip_norm: Some(5.0),
            schedule: LrSchedule::WarmupCosine,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.betas;
        if !(self.lr_base >= 0.0) || !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::Config(format!("invalid lr or betas: {} {:?}", self.lr_base, self.betas)));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("invalid eps or weight decay: {} {}", self.eps, self.weight_decay)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Learning rate of update number `step` (1-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr_base,
            LrSchedule::WarmupCosine => {
                if step < self.warmup_steps {
                    return self.lr_base * step as f64 / self.warmup_steps as f64;
                }
                let span = self.total_steps.saturating_sub(self.warmup_steps);
                if span == 0 {
                    return self.lr_base;
                }
                let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
                self.lr_base * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress))
            }
        }
    }
}

/// Moments and step counter. `m` and `v` mirror the parameter store.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    pub step: usize,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateInfo {
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

impl<T: Real> AdamW<T> {
    pub fn new(cfg: AdamWConfig, store: &ParamStore<T>) -> Result<Self> {
        cfg.validate()?;
        let m: Vec<Vec<T>> = store.iter().map(|(_, p)| vec![T::zero(); p.value.numel()]).collect();
        let v = m.clone();
        Ok(Self { cfg, step: 0, m, v })
    }

    /// Applies one update from the gradients held in `store`. Gradients are
    /// left in place; call [`ParamStore::zero_grad`] before the next pass.
    pub fn update(&mut self, store: &mut ParamStore<T>) -> Result<UpdateInfo> {
        if self.step >= self.cfg.total_steps {
            return Err(Error::Contract(format!(
                "optimizer already ran {} of {} steps",
                self.step, self.cfg.total_steps
            )));
        }
        if self.m.len() != store.len() {
            return Err(Error::Contract("optimizer state does not match the parameter store".into()));
        }
        let grad_norm = store.grad_norm().as_f64();
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm {grad_norm} at step {}", self.step)));
        }
        let clip = match self.cfg.clip_norm {
            Some(c) if grad_norm > c => c / grad_norm,
            _ => 1.0,
        };
        let t = self.step + 1;
        let lr = self.cfg.lr_at(t);
        let (b1, b2) = self.cfg.betas;
        let bc1 = 1.0 - libm::pow(b1, t as f64);
        let bc2 = 1.0 - libm::pow(b2, t as f64);
        let (b1t, b2t, clip_t) = (T::lit(b1), T::lit(b2), T::lit(clip));
        let (one, eps) = (T::one(), T::lit(self.cfg.eps));
        let step_size = T::lit(lr / bc1);
        let inv_bc2_sqrt = T::lit(1.0 / bc2.sqrt());
        for (id, p) in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            if p.weight_decay && self.cfg.weight_decay > 0.0 {
                let keep = T::lit(1.0 - lr * self.cfg.weight_decay);
                p.value.data_mut().iter_mut().for_each(|x| *x *= keep);
            }
            let data = p.value.data_mut();
            for i in 0..data.len() {
                let g = p.grad[i] * clip_t;
                m[i] = b1t * m[i] + (one - b1t) * g;
                v[i] = b2t * v[i] + (one - b2t) * g * g;
                data[i] -= step_size * m[i] / (v[i].sqrt() * inv_bc2_sqrt + eps);
            }
        }
        self.step = t;
        Ok(UpdateInfo { lr, grad_norm })
    }
}
