//! Four-term data-prediction loss:
//!
//! ```text
//! L = λ1 mse(S, Ŝ) + λ2 mse(|S|, |Ŝ|)
//!   + λ3 mean_r mse(S_r, Ŝ_r) + λ4 mean_r mse(|S_r|, |Ŝ_r|)
//! ```
//!
//! where `S_r` re-analyses the waveform `istft(S)` at resolution `r`.

use alloc::format;
use alloc::vec::Vec;

use crate::signal::{magnitude, Stft, StftConfig};
use crate::{Error, Real, Result, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: [f64; 4],
    /// `(n_fft, hop)` pairs for the multi-resolution terms.
    pub mr_resolutions: Vec<(usize, usize)>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: [1.0; 4], mr_resolutions: alloc::vec![(128, 32), (256, 64), (512, 128)] }
    }
}

impl LossWeights {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.lambda.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative, got {:?}", self.lambda)));
        }
        if self.lambda.iter().all(|l| *l == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        if (self.lambda[2] > 0.0 || self.lambda[3] > 0.0) && self.mr_resolutions.is_empty() {
            return Err(Error::Config("multi-resolution terms need at least one resolution".into()));
        }
        for &(n_fft, hop) in &self.mr_resolutions {
            StftConfig::new(n_fft, hop, sample_rate)?;
        }
        Ok(())
    }
}

/// Loss value on the tape plus each unweighted term for logging.
pub struct LossOutput {
    pub total: Var,
    pub terms: [f64; 4],
}

pub struct SpectralLoss<T: Real> {
    pub weights: LossWeights,
    main: Stft<T>,
    mr: Vec<Stft<T>>,
}

fn mse<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::dim("mse", format!("{:?} vs {:?}", tape.shape(a), tape.shape(b))));
    }
    let d = tape.sub(a, b)?;
    let sq = tape.square(d)?;
    tape.mean_all(sq)
}

impl<T: Real> SpectralLoss<T> {
    /// `main` is the analysis the network operates in.
    pub fn new(weights: LossWeights, main: StftConfig) -> Result<Self> {
        weights.validate(main.sample_rate)?;
        let mr = weights
            .mr_resolutions
            .iter()
            .map(|&(n, h)| Stft::new(StftConfig::new(n, h, main.sample_rate)?))
            .collect::<Result<_>>()?;
        Ok(Self { weights, main: Stft::new(main)?, mr })
    }

    pub fn main_stft(&self) -> &Stft<T> {
        &self.main
    }

    /// `target` and `estimate` are planes `[B, 2, F, L]` of a waveform with
    /// `num_samples` samples.
    pub fn compute(&self, tape: &mut Tape<T>, target: Var, estimate: Var, num_samples: usize) -> Result<LossOutput> {
        if tape.shape(target) != tape.shape(estimate) {
            return Err(Error::dim(
                "loss",
                format!("target {:?} vs estimate {:?}", tape.shape(target), tape.shape(estimate)),
            ));
        }
        let lam = self.weights.lambda;
        let mut terms = [0.0; 4];
        let mut parts: Vec<(Var, f64)> = Vec::new();
        let mut add = |tape: &mut Tape<T>, i: usize, v: Var, terms: &mut [f64; 4]| -> Result<()> {
            terms[i] = tape.value(v).item()?.as_f64();
            parts.push((v, lam[i]));
            Ok(())
        };
        if lam[0] > 0.0 {
            let v = mse(tape, target, estimate)?;
            add(tape, 0, v, &mut terms)?;
        }
        if lam[1] > 0.0 {
            let mt = magnitude(tape, target)?;
            let me = magnitude(tape, estimate)?;
            let v = mse(tape, mt, me)?;
            add(tape, 1, v, &mut terms)?;
        }
        if lam[2] > 0.0 || lam[3] > 0.0 {
            let wt = self.main.inverse(tape, target, num_samples)?;
            let we = self.main.inverse(tape, estimate, num_samples)?;
            let (mut cplx, mut mag) = (Vec::new(), Vec::new());
            for stft in &self.mr {
                let st = stft.forward(tape, wt)?;
                let se = stft.forward(tape, we)?;
                if lam[2] > 0.0 {
                    cplx.push(mse(tape, st, se)?);
                }
                if lam[3] > 0.0 {
                    let mt = magnitude(tape, st)?;
                    let me = magnitude(tape, se)?;
                    mag.push(mse(tape, mt, me)?);
                }
            }
            for (i, group) in [(2, cplx), (3, mag)] {
                if group.is_empty() {
                    continue;
                }
                let mut acc = group[0];
                for &g in &group[1..] {
                    acc = tape.add(acc, g)?;
                }
                let avg = tape.scale(acc, T::lit(1.0 / group.len() as f64))?;
                add(tape, i, avg, &mut terms)?;
            }
        }
        let mut total: Option<Var> = None;
        for (v, w) in parts {
            let v = tape.scale(v, T::lit(w))?;
            total = Some(match total {
                Some(t) => tape.add(t, v)?,
                None => v,
            });
        }
        let total = total.ok_or_else(|| Error::Config("all loss weights are zero".into()))?;
        Ok(LossOutput { total, terms })
    }
}
