//! `sbm enhance`: run a checkpoint on WAV files.

use std::path::{Path, PathBuf};

use sbm_core::bridge::{SamplerConfig, SamplerMode, TimeGrid};
use sbm_core::enhance::{Enhancer, Inference};
use sbm_core::signal::Stft;
use sbm_core::rng;

use crate::checkpoint::Checkpoint;
use crate::error::{CliError, CliResult};
use crate::manifest::{Manifest, Split};
use crate::wav;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    OneStep,
    Sde,
    Ode,
}

impl Method {
    pub fn inference(self, steps: usize, ckpt: &Checkpoint) -> CliResult<Inference> {
        if steps == 0 {
            return Err(CliError::Usage("--steps must be at least 1".into()));
        }
        let mode = match self {
            Method::OneStep if steps == 1 => return Ok(Inference::OneStep),
            Method::OneStep => return Err(CliError::Usage("one-step inference takes --steps 1".into())),
            Method::Sde => SamplerMode::Sde,
            Method::Ode => SamplerMode::Ode,
        };
        Ok(Inference::Iterative(SamplerConfig {
            n_steps: steps,
            grid: TimeGrid::Uniform,
            mode,
            convention: ckpt.config.bridge.convention(),
        }))
    }
}

/// A loaded checkpoint ready to enhance clips.
pub struct Model {
    pub ckpt: Checkpoint,
    backbone: sbm_core::backbone::Backbone,
    store: sbm_core::ParamStore<f32>,
    stft: Stft<f32>,
}

impl Model {
    pub fn load(path: &Path) -> CliResult<Self> {
        let ckpt = Checkpoint::load(path)?;
        let (backbone, store) = ckpt.model()?;
        let stft = Stft::new(ckpt.config.stft.stft()?)?;
        Ok(Self { ckpt, backbone, store, stft })
    }

    pub fn enhancer(&self) -> CliResult<Enhancer<'_, f32>> {
        let c = &self.ckpt.config;
        Ok(Enhancer {
            backbone: &self.backbone,
            store: &self.store,
            stft: self.stft.clone(),
            transform: c.stft.transform(),
            sched: c.bridge.schedule()?,
            normalize: c.train.normalize,
        })
    }

    /// Enhances one waveform. The sampler noise comes from `seed`.
    pub fn run(&self, wave: &[f64], how: &Inference, seed: u64) -> CliResult<(Vec<f64>, usize)> {
        Ok(self.enhancer()?.run(wave, how, &mut rng::seeded(seed))?)
    }
}

pub enum Target {
    File { input: PathBuf, output: PathBuf },
    /// Every degraded file of a manifest split, written under `out_dir`
    /// with its original file name.
    Split { manifest: PathBuf, split: Split, out_dir: PathBuf },
}

pub fn run(checkpoint: &Path, target: &Target, method: Method, steps: usize, seed: u64) -> CliResult<usize> {
    let model = Model::load(checkpoint)?;
    let how = method.inference(steps, &model.ckpt)?;
    let jobs: Vec<(PathBuf, PathBuf)> = match target {
        Target::File { input, output } => vec![(input.clone(), output.clone())],
        Target::Split { manifest, split, out_dir } => {
            let m = Manifest::load(manifest)?;
            m.split(*split)
                .map(|e| {
                    let name = e.degraded_path.file_name().expect("manifest paths name files");
                    (m.resolve(&e.degraded_path), out_dir.join(name))
                })
                .collect()
        }
    };
    let mut nfe = 0;
    for (input, output) in &jobs {
        let wave = wav::read(input)?;
        let (out, n) = model.run(&wave, &how, seed)?;
        wav::write(output, &out)?;
        nfe = n;
    }
    println!("NFE {nfe}");
    eprintln!("enhance: {} file(s), {method:?}, {steps} step(s)", jobs.len());
    Ok(nfe)
}
