//! Schrödinger Bridge between clean (`t = 0`) and degraded (`t = T`) signals
//! under a variance-exploding schedule.
//!
//! With `f = 0` and `g²(t) = c·k^{2t}` the bridge marginal given the
//! endpoints `x`, `y` is Gaussian with mean `w_x·x + w_y·y` and variance
//! `σ_x²`, where
//!
//! ```text
//! σ²(t)  = c (k^{2t} - 1) / (2 ln k)
//! σ̄²(t) = σ²(T) - σ²(t)
//! w_x    = σ̄²(t) / σ²(T),   w_y = σ²(t) / σ²(T),   σ_x² = σ²(t) σ̄²(t) / σ²(T)
//! ```

use alloc::format;
use alloc::vec::Vec;

use crate::rng::{self, Rng};
use crate::{Error, Real, Result, Tensor};
#[allow(unused_imports)]
use num_traits::Float as _;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BridgeSchedule {
    pub c: f64,
    pub k: f64,
    pub t_max: f64,
    pub t_eps: f64,
}

impl Default for BridgeSchedule {
    fn default() -> Self {
        Self { c: 0.3, k: 2.6, t_max: 1.0, t_eps: 1e-2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginalCoeffs {
    pub w_x: f64,
    pub w_y: f64,
    pub sigma_x: f64,
    pub t: f64,
}

/// Whether the reverse sampler injects noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerMode {
    Sde,
    Ode,
}

/// How a standard complex Gaussian is laid out over real/imaginary planes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NoiseConvention {
    /// Each component has variance 1/2 (circularly symmetric).
    #[default]
    Split,
    /// Each component has variance 1.
    Full,
}

impl NoiseConvention {
    pub fn component_std(self) -> f64 {
        match self {
            NoiseConvention::Split => core::f64::consts::FRAC_1_SQRT_2,
            NoiseConvention::Full => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TimeGrid {
    #[default]
    Uniform,
}

impl BridgeSchedule {
    pub fn new(c: f64, k: f64, t_eps: f64) -> Result<Self> {
        let s = Self { c, k, t_max: 1.0, t_eps };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("schedule c must be positive, got {}", self.c)));
        }
        if !(self.k > 1.0 && self.k.is_finite()) {
            return Err(Error::Config(format!("schedule k must exceed 1, got {}", self.k)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::Config(format!("terminal time must be positive, got {}", self.t_max)));
        }
        if !(self.t_eps > 0.0 && self.t_eps < self.t_max) {
            return Err(Error::Config(format!("t_eps must lie in (0, T), got {}", self.t_eps)));
        }
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.t_max).contains(&t) {
            return Err(Error::domain("bridge", format!("time {t} outside [0, {}]", self.t_max)));
        }
        Ok(())
    }

    /// Squared diffusion `g²(t) = c·k^{2t}`.
    pub fn g2(&self, t: f64) -> f64 {
        self.c * libm::pow(self.k, 2.0 * t)
    }

    pub fn ve_sigma2(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.sigma2_unchecked(t))
    }

    fn sigma2_unchecked(&self, t: f64) -> f64 {
        let ln_k = libm::log(self.k);
        // expm1 keeps small t accurate.
        self.c * libm::expm1(2.0 * t * ln_k) / (2.0 * ln_k)
    }

    pub fn sigma2_max(&self) -> f64 {
        self.sigma2_unchecked(self.t_max)
    }

    pub fn sigma_bar2(&self, t: f64) -> Result<f64> {
        Ok(self.sigma2_max() - self.ve_sigma2(t)?)
    }

    pub fn marginal_coeffs(&self, t: f64) -> Result<MarginalCoeffs> {
        self.check_time(t)?;
        let total = self.sigma2_max();
        if !(total > 0.0) {
            return Err(Error::Config("degenerate schedule: sigma^2(T) is zero".into()));
        }
        let s2 = self.sigma2_unchecked(t);
        let w_y = s2 / total;
        let w_x = 1.0 - w_y;
        let var = (s2 * (total - s2) / total).max(0.0);
        Ok(MarginalCoeffs { w_x, w_y, sigma_x: var.sqrt(), t })
    }

    /// Descending grid `T = t_0 > t_1 > ... > t_n = 0`.
    pub fn time_grid(&self, n_steps: usize, grid: TimeGrid) -> Vec<f64> {
        match grid {
            TimeGrid::Uniform => (0..=n_steps)
                .map(|i| if i == n_steps { 0.0 } else { self.t_max * (1.0 - i as f64 / n_steps as f64) })
                .collect(),
        }
    }
}

fn same_shape<T: Real>(op: &'static str, tensors: &[&Tensor<T>]) -> Result<()> {
    let first = tensors[0].shape();
    for t in &tensors[1..] {
        if t.shape() != first {
            return Err(Error::dim(op, format!("{:?} vs {:?}", t.shape(), first)));
        }
    }
    Ok(())
}

/// Bridge state `x_t = w_x·x + w_y·y + σ_x·z`. `z` is the already-scaled
/// noise (see [`draw_noise`]).
pub fn sample_state<T: Real>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    t: f64,
    z: &Tensor<T>,
    sched: &BridgeSchedule,
) -> Result<Tensor<T>> {
    same_shape("sample_state", &[x, y, z])?;
    let m = sched.marginal_coeffs(t)?;
    let (wx, wy, sx) = (T::lit(m.w_x), T::lit(m.w_y), T::lit(m.sigma_x));
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .zip(z.data())
        .map(|((&x, &y), &z)| wx * x + wy * y + sx * z)
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Standard complex Gaussian noise laid out on real channels.
pub fn draw_noise<T: Real>(shape: &[usize], convention: NoiseConvention, rng: &mut Rng) -> Tensor<T> {
    let std = convention.component_std();
    Tensor::from_fn(shape.to_vec(), |_| T::lit(std * rng::normal::<f64>(rng)))
}

/// One reverse step from `t` to `s < t`: sample the bridge pinned at `x̂`
/// (time 0) and `x_t` (time `t`). Mean `x̂ + r·(x_t - x̂)` with
/// `r = σ²(s)/σ²(t)`; in SDE mode noise of variance `σ²(s)(σ²(t) - σ²(s))/σ²(t)`
/// is added. At `s = 0` the result is `x̂` exactly.
#[allow(clippy::too_many_arguments)]
pub fn posterior_step<T: Real>(
    x_t: &Tensor<T>,
    x_hat: &Tensor<T>,
    t: f64,
    s: f64,
    z: &Tensor<T>,
    sched: &BridgeSchedule,
    mode: SamplerMode,
) -> Result<Tensor<T>> {
    same_shape("posterior_step", &[x_t, x_hat, z])?;
    if !(s < t) {
        return Err(Error::Contract(format!("posterior_step needs s < t, got s={s}, t={t}")));
    }
    let s2_t = sched.ve_sigma2(t)?;
    let s2_s = sched.ve_sigma2(s)?;
    if s == 0.0 {
        return Ok(x_hat.clone());
    }
    let r = T::lit(s2_s / s2_t);
    let std = match mode {
        SamplerMode::Sde => T::lit((s2_s * (s2_t - s2_s) / s2_t).max(0.0).sqrt()),
        SamplerMode::Ode => T::zero(),
    };
    let data = x_t
        .data()
        .iter()
        .zip(x_hat.data())
        .zip(z.data())
        .map(|((&xt, &xh), &z)| {
            let mean = xh + r * (xt - xh);
            if mode == SamplerMode::Sde {
                mean + std * z
            } else {
                mean
            }
        })
        .collect();
    Tensor::new(x_t.shape().to_vec(), data)
}

/// Settings for [`iterative_sample`].
#[derive(Clone, Copy, Debug)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub grid: TimeGrid,
    pub mode: SamplerMode,
    pub convention: NoiseConvention,
}

/// Reverse-time sampling from `x_T = y`. `model(state, t)` returns the
/// clean estimate. Returns the final state and the number of model calls.
pub fn iterative_sample<T: Real>(
    y: &Tensor<T>,
    mut model: impl FnMut(&Tensor<T>, f64) -> Result<Tensor<T>>,
    cfg: &SamplerConfig,
    sched: &BridgeSchedule,
    rng: &mut Rng,
) -> Result<(Tensor<T>, usize)> {
    if cfg.n_steps == 0 {
        return Err(Error::Contract("iterative_sample needs at least one step".into()));
    }
    let grid = sched.time_grid(cfg.n_steps, cfg.grid);
    let mut state = y.clone();
    let mut nfe = 0;
    for w in grid.windows(2) {
        let (t, s) = (w[0], w[1]);
        let x_hat = model(&state, t)?;
        nfe += 1;
        if x_hat.shape() != state.shape() {
            return Err(Error::dim("iterative_sample", format!("model returned {:?}", x_hat.shape())));
        }
        let z = if cfg.mode == SamplerMode::Sde && s > 0.0 {
            draw_noise(state.shape(), cfg.convention, rng)
        } else {
            Tensor::zeros(state.shape().to_vec())
        };
        state = posterior_step(&state, &x_hat, t, s, &z, sched, cfg.mode)?;
    }
    Ok((state, nfe))
}

/// Single model call at `t = T`, where the bridge state is exactly `y`.
pub fn one_step_enhance<T: Real>(
    y: &Tensor<T>,
    mut model: impl FnMut(&Tensor<T>, f64) -> Result<Tensor<T>>,
    sched: &BridgeSchedule,
) -> Result<Tensor<T>> {
    model(y, sched.t_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries() {
        let s = BridgeSchedule::default();
        assert_eq!(s.ve_sigma2(0.0).unwrap(), 0.0);
        let m0 = s.marginal_coeffs(0.0).unwrap();
        assert_eq!((m0.w_x, m0.w_y, m0.sigma_x), (1.0, 0.0, 0.0));
        let m1 = s.marginal_coeffs(1.0).unwrap();
        assert_eq!((m1.w_x, m1.w_y, m1.sigma_x), (0.0, 1.0, 0.0));
        assert!(s.ve_sigma2(1.5).is_err());
        assert!(s.ve_sigma2(-0.1).is_err());
    }

    #[test]
    fn ode_step_arithmetic() {
        // sigma^2(t) = 2, sigma^2(s) = 1 -> r = 1/2, mean = 2 for x_t = 4, x_hat = 0.
        let sched = BridgeSchedule::default();
        let total = sched.sigma2_max();
        let find = |target: f64| {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if sched.ve_sigma2(mid).unwrap() < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let (t, s) = (find(total * 0.5), find(total * 0.25));
        let xt = Tensor::<f64>::scalar(4.0);
        let xh = Tensor::<f64>::scalar(0.0);
        let z = Tensor::<f64>::scalar(0.0);
        let out = posterior_step(&xt, &xh, t, s, &z, &sched, SamplerMode::Ode).unwrap();
        assert!((out.item().unwrap() - 2.0).abs() < 1e-12);
        assert!(posterior_step(&xt, &xh, s, t, &z, &sched, SamplerMode::Ode).is_err());
    }

    #[test]
    fn grid_ends_at_zero() {
        let g = BridgeSchedule::default().time_grid(4, TimeGrid::Uniform);
        assert_eq!(g, [1.0, 0.75, 0.5, 0.25, 0.0]);
    }
}
