use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::rng::{self, Rng};
use crate::ssm::{causal_depthwise_conv, selective_scan, ScanImpl};
use crate::{ParamId, ParamStore, Real, Result, Tape, Tensor, Var};
#[allow(unused_imports)]
use num_traits::Float as _;

fn uniform_tensor<T: Real>(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng::uniform(rng, -bound, bound)))
}

/// Inverse of softplus for positive `y`.
pub(crate) fn softplus_inv(y: f64) -> f64 {
    y + libm::log(-libm::expm1(-y))
}

/// `x @ w + b` with `w: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = store.add(format!("{name}.w"), uniform_tensor(&[d_in, d_out], bound, rng))?;
        let b = if bias {
            Some(store.add_with(format!("{name}.b"), Tensor::zeros([d_out]), true, false)?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = self.b.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }

    pub fn zero<T: Real>(&self, store: &mut ParamStore<T>) {
        for id in core::iter::once(self.w).chain(self.b) {
            let p = store.get_mut(id);
            p.value = Tensor::zeros(p.value.shape().to_vec());
        }
    }
}

/// Layer normalization over the last axis with learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        let gamma = store.add_with(format!("{name}.gamma"), Tensor::ones([dim]), true, false)?;
        let beta = store.add_with(format!("{name}.beta"), Tensor::zeros([dim]), true, false)?;
        Ok(Self { gamma, beta })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let axis = tape.shape(x).len() - 1;
        tape.layer_norm(x, axis, Some(g), Some(b), T::lit(Self::EPS))
    }
}

/// Gated selective-scan cell on `[batch, len, d_model]` sequences, causal
/// along `len`.
#[derive(Clone, Debug)]
pub struct MambaCell {
    pub in_x: Linear,
    pub in_z: Linear,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub x_dt: Linear,
    pub dt_proj: Linear,
    pub x_b: Linear,
    pub x_c: Linear,
    pub a_raw: ParamId,
    pub d_skip: ParamId,
    pub out: Linear,
    pub scan: ScanImpl,
}

#[derive(Clone, Copy, Debug)]
pub struct CellDims {
    pub d_model: usize,
    pub d_inner: usize,
    pub d_state: usize,
    pub dt_rank: usize,
    pub conv_width: usize,
}

impl MambaCell {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dims: CellDims, scan: ScanImpl, rng: &mut Rng) -> Result<Self> {
        let CellDims { d_model, d_inner, d_state, dt_rank, conv_width } = dims;
        let in_x = Linear::new(store, &format!("{name}.in_x"), d_model, d_inner, false, rng)?;
        let in_z = Linear::new(store, &format!("{name}.in_z"), d_model, d_inner, false, rng)?;
        let conv_bound = 1.0 / (conv_width as f64).sqrt();
        let conv_w = store.add(format!("{name}.conv.w"), uniform_tensor(&[d_inner, conv_width], conv_bound, rng))?;
        let conv_b = store.add_with(format!("{name}.conv.b"), Tensor::zeros([d_inner]), true, false)?;
        let x_dt = Linear::new(store, &format!("{name}.x_dt"), d_inner, dt_rank, false, rng)?;
        let dt_proj = Linear::new(store, &format!("{name}.dt_proj"), dt_rank, d_inner, true, rng)?;
        // Step sizes start log-uniform in [1e-3, 1e-1].
        let dt_bias: Vec<T> = (0..d_inner)
            .map(|_| {
                let dt = libm::exp(rng::uniform(rng, libm::log(1e-3), libm::log(1e-1)));
                T::lit(softplus_inv(dt))
            })
            .collect();
        store.set_value(dt_proj.b.expect("dt_proj has a bias"), Tensor::new([d_inner], dt_bias)?)?;
        let x_b = Linear::new(store, &format!("{name}.x_b"), d_inner, d_state, false, rng)?;
        let x_c = Linear::new(store, &format!("{name}.x_c"), d_inner, d_state, false, rng)?;
        // S4D-real: a[:, n] = -(n + 1).
        let a_raw = Tensor::from_fn([d_inner, d_state], |i| T::lit(softplus_inv((i % d_state + 1) as f64)));
        let a_raw = store.add_with(format!("{name}.a_raw"), a_raw, true, false)?;
        let d_skip = store.add_with(format!("{name}.d"), Tensor::ones([d_inner]), true, false)?;
        let out = Linear::new(store, &format!("{name}.out"), d_inner, d_model, false, rng)?;
        Ok(Self { in_x, in_z, conv_w, conv_b, x_dt, dt_proj, x_b, x_c, a_raw, d_skip, out, scan })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let xi = self.in_x.forward(tape, store, x)?;
        let z = self.in_z.forward(tape, store, x)?;
        let cw = tape.param(store, self.conv_w);
        let cb = tape.param(store, self.conv_b);
        let xc = causal_depthwise_conv(tape, xi, cw, Some(cb))?;
        let xc = tape.silu(xc)?;
        let dt = self.x_dt.forward(tape, store, xc)?;
        let dt = self.dt_proj.forward(tape, store, dt)?;
        let delta = tape.softplus(dt)?;
        let b = self.x_b.forward(tape, store, xc)?;
        let c = self.x_c.forward(tape, store, xc)?;
        let a_raw = tape.param(store, self.a_raw);
        let a = tape.softplus(a_raw)?;
        let a = tape.neg(a)?;
        let d = tape.param(store, self.d_skip);
        let y = selective_scan(tape, xc, delta, a, b, c, d, self.scan)?;
        let gate = tape.silu(z)?;
        let y = tape.mul(y, gate)?;
        self.out.forward(tape, store, y)
    }
}

/// Sum of a forward cell and a cell run on the reversed sequence.
#[derive(Clone, Debug)]
pub struct BiMamba {
    pub fwd: MambaCell,
    pub bwd: MambaCell,
}

impl BiMamba {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dims: CellDims, scan: ScanImpl, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            fwd: MambaCell::new(store, &format!("{name}.fwd"), dims, scan, rng)?,
            bwd: MambaCell::new(store, &format!("{name}.bwd"), dims, scan, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let f = self.fwd.forward(tape, store, x)?;
        let xr = tape.flip(x, 1)?;
        let r = self.bwd.forward(tape, store, xr)?;
        let r = tape.flip(r, 1)?;
        tape.add(f, r)
    }
}

/// Sequence mixer: causal or bidirectional.
#[derive(Clone, Debug)]
pub enum Mixer {
    Causal(MambaCell),
    Bidirectional(BiMamba),
}

impl Mixer {
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        match self {
            Mixer::Causal(c) => c.forward(tape, store, x),
            Mixer::Bidirectional(b) => b.forward(tape, store, x),
        }
    }

    pub fn zero_output<T: Real>(&self, store: &mut ParamStore<T>) {
        match self {
            Mixer::Causal(c) => c.out.zero(store),
            Mixer::Bidirectional(b) => {
                b.fwd.out.zero(store);
                b.bwd.out.zero(store);
            }
        }
    }
}

/// Gaussian Fourier features of the timestep followed by a learned
/// projection to `d_model`.
#[derive(Clone, Debug)]
pub struct TimestepEmbedding {
    pub freqs: ParamId,
    pub proj: Linear,
}

impl TimestepEmbedding {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        fourier_dim: usize,
        scale: f64,
        d_model: usize,
        train_freqs: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let freqs = Tensor::from_fn([fourier_dim / 2], |_| T::lit(scale * rng::normal::<f64>(rng)));
        let freqs = store.add_with(String::from("temb.freqs"), freqs, train_freqs, false)?;
        let proj = Linear::new(store, "temb.proj", fourier_dim, d_model, true, rng)?;
        Ok(Self { freqs, proj })
    }

    /// `[sin(2π f t), cos(2π f t)]` for `t[batch]`, shape `[batch, fourier_dim]`.
    pub fn features<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, t: &[f64]) -> Result<Var> {
        let freqs = tape.param(store, self.freqs);
        let tt = tape.constant(Tensor::from_fn([t.len(), 1], |i| T::lit(2.0 * core::f64::consts::PI * t[i])));
        let arg = tape.mul(tt, freqs)?;
        let s = tape.sin(arg)?;
        let c = tape.cos(arg)?;
        tape.concat(&[s, c], 1)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, t: &[f64]) -> Result<Var> {
        let feats = self.features(tape, store, t)?;
        self.proj.forward(tape, store, feats)
    }
}
