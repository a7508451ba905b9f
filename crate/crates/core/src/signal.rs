//! Short-time Fourier analysis and synthesis on the tape.
//!
//! Frames are centred (reflect padding of `n_fft / 2` on both sides), so a
//! signal of `N` samples gives `ceil(N / hop)` frames. Bins are scaled by
//! `1/sqrt(n_fft)`; with a periodic Hann window this makes the one-sided
//! power `sum_k c_k |X_k|^2` (with `c_k = 2` except at DC and Nyquist)
//! equal to the energy of the windowed frame.
//!
//! Both directions are single matrix products against cached bases plus a
//! gather (framing) or scatter-add (overlap-add), so gradients come from
//! the ordinary tape rules.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::{Error, Real, Result, Tape, Tensor, Var};
#[allow(unused_imports)]
use num_traits::Float as _;

/// Floor inside the magnitude square root, keeping its gradient finite at 0.
pub const EPS_MAG: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Window {
    /// Periodic Hann.
    #[default]
    Hann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { n_fft: 512, hop: 128, sample_rate: 16_000, window: Window::Hann }
    }
}

impl StftConfig {
    pub fn new(n_fft: usize, hop: usize, sample_rate: u32) -> Result<Self> {
        let cfg = Self { n_fft, hop, sample_rate, window: Window::Hann };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hann overlap-add is exact when the hop divides the frame and frames
    /// overlap at least twice.
    pub fn is_cola(&self) -> bool {
        self.hop > 0 && self.n_fft % self.hop == 0 && self.n_fft / self.hop >= 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 4 || self.n_fft % 2 != 0 {
            return Err(Error::Config(format!("n_fft must be even and at least 4, got {}", self.n_fft)));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::Config(format!("hop {} must lie in 1..={}", self.hop, self.n_fft)));
        }
        if !self.is_cola() {
            return Err(Error::Config(format!(
                "hann window with n_fft {} and hop {} does not overlap-add to a constant",
                self.n_fft, self.hop
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.hop)
    }
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| 0.5 - 0.5 * libm::cos(2.0 * core::f64::consts::PI * j as f64 / n as f64))
        .collect()
}

/// Mirror index into `0..n` without repeating the edge sample.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Complex spectrogram stored as real/imaginary planes `[batch, 2, F, L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectroBatch<T = f32> {
    pub planes: Tensor<T>,
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
    /// Length of the waveform the spectrogram was computed from.
    pub num_samples: usize,
}

impl<T: Real> SpectroBatch<T> {
    pub fn new(planes: Tensor<T>, cfg: &StftConfig, num_samples: usize) -> Result<Self> {
        let &[_, two, f, l] = planes.shape() else {
            return Err(Error::dim("spectro", format!("planes must be [batch, 2, F, L], got {:?}", planes.shape())));
        };
        if two != 2 || f != cfg.n_bins() || l != cfg.n_frames(num_samples) {
            return Err(Error::dim(
                "spectro",
                format!("planes {:?} do not fit n_fft {} hop {} and {num_samples} samples", planes.shape(), cfg.n_fft, cfg.hop),
            ));
        }
        Ok(Self { planes, sample_rate: cfg.sample_rate, n_fft: cfg.n_fft, hop: cfg.hop, window: cfg.window, num_samples })
    }

    pub fn config(&self) -> StftConfig {
        StftConfig { n_fft: self.n_fft, hop: self.hop, sample_rate: self.sample_rate, window: self.window }
    }

    pub fn batch(&self) -> usize {
        self.planes.shape()[0]
    }

    pub fn n_bins(&self) -> usize {
        self.planes.shape()[2]
    }

    pub fn n_frames(&self) -> usize {
        self.planes.shape()[3]
    }

    pub fn same_geometry(&self, other: &Self) -> bool {
        self.planes.shape() == other.planes.shape()
            && self.n_fft == other.n_fft
            && self.hop == other.hop
            && self.num_samples == other.num_samples
    }

    pub fn with_planes(&self, planes: Tensor<T>) -> Result<Self> {
        if planes.shape() != self.planes.shape() {
            return Err(Error::dim("spectro", format!("{:?} vs {:?}", planes.shape(), self.planes.shape())));
        }
        Ok(Self { planes, ..self.clone() })
    }
}

/// STFT with precomputed analysis and synthesis bases.
#[derive(Clone, Debug)]
pub struct Stft<T: Real = f32> {
    cfg: StftConfig,
    window: Vec<f64>,
    /// `[n_fft, 2F]`: windowed cosines then negated windowed sines.
    analysis: Tensor<T>,
    /// `[2F, n_fft]`: one-sided inverse transform times the window.
    synthesis: Tensor<T>,
}

impl<T: Real> Stft<T> {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_fft;
        let f = cfg.n_bins();
        let window = hann(n);
        let scale = 1.0 / (n as f64).sqrt();
        let tau = 2.0 * core::f64::consts::PI / n as f64;
        // Angles reduced mod n keep the basis accurate for large n_fft.
        let angle = |k: usize, j: usize| tau * ((k * j) % n) as f64;
        let mut analysis = alloc::vec![T::zero(); n * 2 * f];
        let mut synthesis = alloc::vec![T::zero(); 2 * f * n];
        for j in 0..n {
            for k in 0..f {
                let (s, c) = libm::sincos(angle(k, j));
                analysis[j * 2 * f + k] = T::lit(window[j] * c * scale);
                analysis[j * 2 * f + f + k] = T::lit(-window[j] * s * scale);
                let weight = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
                synthesis[k * n + j] = T::lit(weight * c * window[j] * scale);
                synthesis[(f + k) * n + j] = T::lit(-weight * s * window[j] * scale);
            }
        }
        Ok(Self {
            cfg,
            window,
            analysis: Tensor::new([n, 2 * f], analysis)?,
            synthesis: Tensor::new([2 * f, n], synthesis)?,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// `wave[batch, N]` to planes `[batch, 2, F, L]`.
    pub fn forward(&self, tape: &mut Tape<T>, wave: Var) -> Result<Var> {
        let &[batch, n_samples] = tape.shape(wave) else {
            return Err(Error::dim("stft", format!("waveform must be [batch, N], got {:?}", tape.shape(wave))));
        };
        if n_samples == 0 {
            return Err(Error::dim("stft", "empty waveform"));
        }
        let StftConfig { n_fft, hop, .. } = self.cfg;
        let frames = self.cfg.n_frames(n_samples);
        let half = (n_fft / 2) as isize;
        let idx: Vec<usize> = (0..frames)
            .flat_map(|l| (0..n_fft).map(move |j| (l * hop + j) as isize - half))
            .map(|i| reflect_index(i, n_samples))
            .collect();
        let framed = tape.gather(wave, 1, idx)?;
        let framed = tape.reshape(framed, [batch, frames, n_fft])?;
        let basis = tape.constant(self.analysis.clone());
        let spec = tape.matmul(framed, basis)?;
        let f = self.cfg.n_bins();
        let spec = tape.reshape(spec, [batch, frames, 2, f])?;
        tape.permute(spec, &[0, 2, 3, 1])
    }

    /// Planes `[batch, 2, F, L]` back to `[batch, target_len]` by weighted
    /// overlap-add.
    pub fn inverse(&self, tape: &mut Tape<T>, planes: Var, target_len: usize) -> Result<Var> {
        let &[batch, two, f, frames] = tape.shape(planes) else {
            return Err(Error::dim("istft", format!("planes must be [batch, 2, F, L], got {:?}", tape.shape(planes))));
        };
        if two != 2 || f != self.cfg.n_bins() {
            return Err(Error::dim("istft", format!("planes {:?} for n_fft {}", tape.shape(planes), self.cfg.n_fft)));
        }
        let StftConfig { n_fft, hop, .. } = self.cfg;
        let x = tape.permute(planes, &[0, 3, 1, 2])?;
        let x = tape.reshape(x, [batch, frames, 2 * f])?;
        let basis = tape.constant(self.synthesis.clone());
        let segs = tape.matmul(x, basis)?;
        let segs = tape.reshape(segs, [batch, frames * n_fft])?;
        let padded_len = frames.saturating_sub(1) * hop + n_fft;
        let idx: Vec<usize> = (0..frames).flat_map(|l| (0..n_fft).map(move |j| l * hop + j)).collect();
        let summed = tape.scatter_add(segs, 1, idx, padded_len)?;
        // Crop to the centred region, zero-extending past the last frame.
        let half = n_fft / 2;
        let keep = target_len.min(padded_len.saturating_sub(half));
        let cropped = tape.narrow(summed, 1, half, keep)?;
        let cropped = if keep < target_len {
            let zeros = tape.constant(Tensor::zeros([batch, target_len - keep]));
            tape.concat(&[cropped, zeros], 1)?
        } else {
            cropped
        };
        let inv_env = tape.constant(self.inverse_envelope(frames, target_len));
        tape.mul(cropped, inv_env)
    }

    /// `1 / sum_l w^2(i - l*hop)` over the cropped output, 0 where no frame
    /// reaches.
    fn inverse_envelope(&self, frames: usize, target_len: usize) -> Tensor<T> {
        let StftConfig { n_fft, hop, .. } = self.cfg;
        let half = n_fft / 2;
        let mut env = alloc::vec![0.0f64; target_len];
        for l in 0..frames {
            for j in 0..n_fft {
                if let Some(i) = (l * hop + j).checked_sub(half).filter(|&i| i < target_len) {
                    env[i] += self.window[j] * self.window[j];
                }
            }
        }
        Tensor::from_fn([target_len], |i| T::lit(if env[i] > 1e-10 { 1.0 / env[i] } else { 0.0 }))
    }

    /// Gradient-free analysis of `wave[batch, N]`.
    pub fn analyze(&self, wave: &Tensor<T>) -> Result<SpectroBatch<T>> {
        let mut tape = Tape::no_grad();
        let w = tape.constant(wave.clone());
        let s = self.forward(&mut tape, w)?;
        let n = wave.shape().get(1).copied().unwrap_or(0);
        SpectroBatch::new(tape.value(s).clone(), &self.cfg, n)
    }

    /// Gradient-free synthesis back to `spec.num_samples` samples.
    pub fn synthesize(&self, spec: &SpectroBatch<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::no_grad();
        let p = tape.constant(spec.planes.clone());
        let w = self.inverse(&mut tape, p, spec.num_samples)?;
        Ok(tape.value(w).clone())
    }
}

/// `sqrt(re^2 + im^2 + EPS_MAG)` of planes `[batch, 2, F, L]`, giving
/// `[batch, F, L]`.
pub fn magnitude<T: Real>(tape: &mut Tape<T>, planes: Var) -> Result<Var> {
    let &[batch, two, f, l] = tape.shape(planes) else {
        return Err(Error::dim("magnitude", format!("planes must be rank 4, got {:?}", tape.shape(planes))));
    };
    if two != 2 {
        return Err(Error::dim("magnitude", format!("expected two planes, got {two}")));
    }
    let sq = tape.square(planes)?;
    let power = tape.sum(sq, &[1])?;
    let power = tape.add_scalar(power, T::lit(EPS_MAG))?;
    let mag = tape.sqrt(power)?;
    tape.reshape(mag, [batch, f, l])
}

/// Magnitude compression `|S| -> beta |S|^alpha` with the phase kept.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum SpecTransform {
    #[default]
    None,
    Compress { alpha: f64, beta: f64 },
}

impl SpecTransform {
    pub fn validate(&self) -> Result<()> {
        if let SpecTransform::Compress { alpha, beta } = *self {
            if !(alpha > 0.0 && alpha <= 1.0) || !(beta > 0.0) {
                return Err(Error::Config(format!("compression needs alpha in (0, 1] and beta > 0, got {alpha}, {beta}")));
            }
        }
        Ok(())
    }

    fn apply_planes<T: Real>(planes: &Tensor<T>, gain: impl Fn(f64) -> f64) -> Result<Tensor<T>> {
        let shape = planes.shape();
        if shape.len() != 4 || shape[1] != 2 {
            return Err(Error::dim("spec_transform", format!("planes must be [batch, 2, F, L], got {shape:?}")));
        }
        let plane = shape[2] * shape[3];
        let mut out = planes.clone();
        let data = out.data_mut();
        for b in 0..shape[0] {
            let base = b * 2 * plane;
            for i in 0..plane {
                let (re, im) = (data[base + i].as_f64(), data[base + plane + i].as_f64());
                let mag = (re * re + im * im).sqrt();
                let g = if mag > 0.0 { gain(mag) } else { 0.0 };
                data[base + i] = T::lit(re * g);
                data[base + plane + i] = T::lit(im * g);
            }
        }
        Ok(out)
    }

    pub fn forward<T: Real>(&self, s: &SpectroBatch<T>) -> Result<SpectroBatch<T>> {
        self.validate()?;
        match *self {
            SpecTransform::None => Ok(s.clone()),
            SpecTransform::Compress { alpha, beta } => {
                s.with_planes(Self::apply_planes(&s.planes, |m| beta * m.powf(alpha) / m)?)
            }
        }
    }

    pub fn inverse<T: Real>(&self, s: &SpectroBatch<T>) -> Result<SpectroBatch<T>> {
        self.validate()?;
        match *self {
            SpecTransform::None => Ok(s.clone()),
            SpecTransform::Compress { alpha, beta } => {
                s.with_planes(Self::apply_planes(&s.planes, |m| (m / beta).powf(1.0 / alpha) / m)?)
            }
        }
    }
}

/// Shared handle, so the loss and the backbone can reuse one set of bases.
pub type SharedStft<T> = Arc<Stft<T>>;
