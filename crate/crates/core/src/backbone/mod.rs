//! Spectral enhancement network `D(x_t, t)`.
//!
//! ```text
//! planes [B, 2, F, L]
//!   -> compress: reflect-pad, fold (ff x tf x 2) patches, linear to d_model
//!   -> n_blocks narrow-band blocks (per-frequency Mamba along time, + t embedding)
//!   -> full-band block (bidirectional Mamba along frequency)
//!   -> decompress: linear to patches, unfold, crop
//!   -> + input
//! ```
//!
//! Hidden activations are channels-last, `[B, F', L', d_model]`, so that
//! per-frequency sequences are contiguous rows.

use alloc::format;
use alloc::vec::Vec;

use crate::rng::Rng;
use crate::signal::reflect_index;
use crate::ssm::ScanImpl;
use crate::{Error, ParamStore, Real, Result, Tape, Tensor, Var};

mod layers;

pub use layers::{BiMamba, CellDims, LayerNorm, Linear, MambaCell, Mixer, TimestepEmbedding};

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub n_blocks: usize,
    pub d_model: usize,
    pub d_state: usize,
    /// Inner width of each Mamba cell as a multiple of `d_model`.
    pub expand: usize,
    pub conv_width: usize,
    /// `(freq_factor, time_factor)` patch size of the compression stage.
    pub tf_compress: (usize, usize),
    pub time_causal: bool,
    /// Whether the network takes a timestep. Off for direct predictive
    /// mapping, which then has no embedding parameters at all.
    pub timestep: bool,
    pub fourier_dim: usize,
    pub fourier_scale: f64,
    pub train_fourier_freqs: bool,
    /// Start the output projection at zero so the network is the identity.
    pub zero_init_output: bool,
    pub scan: ScanImpl,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            n_blocks: 4,
            d_model: 64,
            d_state: 16,
            expand: 2,
            conv_width: 4,
            tf_compress: (4, 2),
            time_causal: true,
            timestep: true,
            fourier_dim: 64,
            fourier_scale: 16.0,
            train_fourier_freqs: false,
            zero_init_output: false,
            scan: ScanImpl::Sequential,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: alloc::string::String| Err(Error::Config(m));
        if self.d_model == 0 || self.d_state == 0 || self.expand == 0 || self.conv_width == 0 {
            return fail(format!("backbone widths must be positive: {self:?}"));
        }
        if self.tf_compress.0 == 0 || self.tf_compress.1 == 0 {
            return fail(format!("compression factors must be positive, got {:?}", self.tf_compress));
        }
        if self.timestep && (self.fourier_dim == 0 || self.fourier_dim % 2 != 0) {
            return fail(format!("fourier_dim must be even and positive, got {}", self.fourier_dim));
        }
        if self.timestep && !(self.fourier_scale > 0.0) {
            return fail(format!("fourier_scale must be positive, got {}", self.fourier_scale));
        }
        Ok(())
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn cell_dims(&self) -> CellDims {
        CellDims {
            d_model: self.d_model,
            d_inner: self.d_inner(),
            d_state: self.d_state,
            dt_rank: self.d_model.div_ceil(16),
            conv_width: self.conv_width,
        }
    }

    /// Hidden grid `(F', L')` for an `(F, L)` spectrogram.
    pub fn compressed_grid(&self, f: usize, l: usize) -> Result<(usize, usize)> {
        let (ff, tf) = self.tf_compress;
        if ff > f || tf > l {
            return Err(Error::Config(format!("compression {:?} exceeds spectrogram {f} x {l}", self.tf_compress)));
        }
        Ok((f.div_ceil(ff), l.div_ceil(tf)))
    }
}

/// Layer norm, timestep injection, sequence mixer along time, residual.
#[derive(Clone, Debug)]
pub struct NarrowbandBlock {
    pub norm: LayerNorm,
    pub t_proj: Option<Linear>,
    pub mixer: Mixer,
}

/// Layer norm and bidirectional mixer along frequency, residual.
#[derive(Clone, Debug)]
pub struct FullbandBlock {
    pub norm: LayerNorm,
    pub mixer: BiMamba,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub embed: Option<TimestepEmbedding>,
    pub compress: Linear,
    pub blocks: Vec<NarrowbandBlock>,
    pub fullband: FullbandBlock,
    pub decompress: Linear,
}

impl Backbone {
    /// Registers all parameters in `store` (which should be empty).
    pub fn new<T: Real>(cfg: BackboneConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let patch = 2 * cfg.tf_compress.0 * cfg.tf_compress.1;
        let embed = if cfg.timestep {
            Some(TimestepEmbedding::new(store, cfg.fourier_dim, cfg.fourier_scale, d, cfg.train_fourier_freqs, rng)?)
        } else {
            None
        };
        let compress = Linear::new(store, "compress", patch, d, true, rng)?;
        let dims = cfg.cell_dims();
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for i in 0..cfg.n_blocks {
            let name = format!("nb{i}");
            let norm = LayerNorm::new(store, &format!("{name}.norm"), d)?;
            let t_proj = if cfg.timestep {
                Some(Linear::new(store, &format!("{name}.t_proj"), d, d, true, rng)?)
            } else {
                None
            };
            let mixer = if cfg.time_causal {
                Mixer::Causal(MambaCell::new(store, &format!("{name}.cell"), dims, cfg.scan, rng)?)
            } else {
                Mixer::Bidirectional(BiMamba::new(store, &format!("{name}.cell"), dims, cfg.scan, rng)?)
            };
            blocks.push(NarrowbandBlock { norm, t_proj, mixer });
        }
        let fullband = FullbandBlock {
            norm: LayerNorm::new(store, "fb.norm", d)?,
            mixer: BiMamba::new(store, "fb.cell", dims, cfg.scan, rng)?,
        };
        let decompress = Linear::new(store, "decompress", d, patch, true, rng)?;
        if cfg.zero_init_output {
            decompress.zero(store);
        }
        Ok(Self { cfg, embed, compress, blocks, fullband, decompress })
    }

    /// Number of scalar parameters registered by a backbone with `cfg`.
    pub fn param_count(cfg: &BackboneConfig) -> Result<usize> {
        let mut store = ParamStore::<f32>::new();
        Backbone::new(cfg.clone(), &mut store, &mut crate::rng::seeded(0))?;
        Ok(store.num_scalars())
    }

    /// `[B, 2, F, L]` planes to `[B, F', L', d_model]`.
    pub fn tf_compress<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let &[b, two, f, l] = tape.shape(x) else {
            return Err(Error::dim("tf_compress", format!("expected [B, 2, F, L], got {:?}", tape.shape(x))));
        };
        if two != 2 {
            return Err(Error::dim("tf_compress", format!("expected 2 planes, got {two}")));
        }
        let (ff, tf) = self.cfg.tf_compress;
        let (fc, lc) = self.cfg.compressed_grid(f, l)?;
        let h = tape.permute(x, &[0, 2, 3, 1])?;
        let h = pad_end(tape, h, 1, fc * ff)?;
        let h = pad_end(tape, h, 2, lc * tf)?;
        let h = tape.reshape(h, [b, fc, ff, lc, tf, 2])?;
        let h = tape.permute(h, &[0, 1, 3, 2, 4, 5])?;
        let h = tape.reshape(h, [b, fc, lc, ff * tf * 2])?;
        self.compress.forward(tape, store, h)
    }

    /// `[B, F', L', d_model]` back to planes `[B, 2, f, l]`.
    pub fn tf_decompress<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        h: Var,
        (f, l): (usize, usize),
    ) -> Result<Var> {
        let &[b, fc, lc, _] = tape.shape(h) else {
            return Err(Error::dim("tf_decompress", format!("expected rank 4, got {:?}", tape.shape(h))));
        };
        let (ff, tf) = self.cfg.tf_compress;
        if fc * ff < f || lc * tf < l {
            return Err(Error::dim("tf_decompress", format!("grid {fc} x {lc} cannot cover {f} x {l}")));
        }
        let p = self.decompress.forward(tape, store, h)?;
        let p = tape.reshape(p, [b, fc, lc, ff, tf, 2])?;
        let p = tape.permute(p, &[0, 1, 3, 2, 4, 5])?;
        let p = tape.reshape(p, [b, fc * ff, lc * tf, 2])?;
        let p = if fc * ff > f { tape.narrow(p, 1, 0, f)? } else { p };
        let p = if lc * tf > l { tape.narrow(p, 2, 0, l)? } else { p };
        tape.permute(p, &[0, 3, 1, 2])
    }

    /// Shared timestep embedding for each batch item, `[B, d_model]`.
    pub fn embed_time<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, t: &[f64]) -> Result<Option<Var>> {
        match &self.embed {
            Some(e) => Ok(Some(e.forward(tape, store, t)?)),
            None => Ok(None),
        }
    }

    pub fn narrowband<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        block: &NarrowbandBlock,
        h: Var,
        t_emb: Option<Var>,
    ) -> Result<Var> {
        let shape = tape.shape(h).to_vec();
        let &[b, fc, lc, d] = shape.as_slice() else {
            return Err(Error::dim("narrowband", format!("expected rank 4, got {shape:?}")));
        };
        let mut u = block.norm.forward(tape, store, h)?;
        if let (Some(proj), Some(e)) = (&block.t_proj, t_emb) {
            let e = tape.silu(e)?;
            let e = proj.forward(tape, store, e)?;
            let e = tape.reshape(e, [b, 1, 1, d])?;
            u = tape.add(u, e)?;
        }
        let u = tape.reshape(u, [b * fc, lc, d])?;
        let y = block.mixer.forward(tape, store, u)?;
        let y = tape.reshape(y, shape)?;
        tape.add(h, y)
    }

    pub fn fullband_block<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, h: Var) -> Result<Var> {
        let &[b, fc, lc, d] = tape.shape(h) else {
            return Err(Error::dim("fullband", format!("expected rank 4, got {:?}", tape.shape(h))));
        };
        let x = tape.permute(h, &[0, 2, 1, 3])?;
        let x = self.fullband.norm.forward(tape, store, x)?;
        let x = tape.reshape(x, [b * lc, fc, d])?;
        let y = self.fullband.mixer.forward(tape, store, x)?;
        let y = tape.reshape(y, [b, lc, fc, d])?;
        let y = tape.permute(y, &[0, 2, 1, 3])?;
        tape.add(h, y)
    }

    /// Clean-spectrum estimate for planes `x[B, 2, F, L]` at times `t[B]`.
    /// `t` is ignored (and may be empty) without timestep conditioning.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, t: &[f64]) -> Result<Var> {
        if !tape.value(x).is_finite() {
            return Err(Error::Input("backbone input contains non-finite values".into()));
        }
        let &[b, _, f, l] = tape.shape(x) else {
            return Err(Error::dim("backbone", format!("expected [B, 2, F, L], got {:?}", tape.shape(x))));
        };
        let t_emb = if self.embed.is_some() {
            if t.len() != b {
                return Err(Error::dim("backbone", format!("{} timesteps for batch {b}", t.len())));
            }
            self.embed_time(tape, store, t)?
        } else {
            None
        };
        let mut h = self.tf_compress(tape, store, x)?;
        for block in &self.blocks {
            h = self.narrowband(tape, store, block, h, t_emb)?;
        }
        h = self.fullband_block(tape, store, h)?;
        let out = self.tf_decompress(tape, store, h, (f, l))?;
        tape.add(x, out)
    }

    /// Gradient-free forward on a plain tensor.
    pub fn predict<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>, t: &[f64]) -> Result<Tensor<T>> {
        let mut tape = Tape::no_grad();
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, store, xv, t)?;
        Ok(tape.value(y).clone())
    }
}

/// Extends `axis` to `target` by reflecting at the end.
fn pad_end<T: Real>(tape: &mut Tape<T>, x: Var, axis: usize, target: usize) -> Result<Var> {
    let n = tape.shape(x)[axis];
    if target == n {
        return Ok(x);
    }
    let idx: Vec<usize> = (0..target).map(|i| reflect_index(i as isize, n)).collect();
    tape.gather(x, axis, idx)
}
