//! `sbm bench-rtf`: real-time factor per sampler step count.

use std::path::Path;
use std::time::Instant;

use crate::cmd::enhance::{Method, Model};
use crate::cmd::synth::{entry_seed, generate};
use crate::error::CliResult;

pub const WARMUP_RUNS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct RtfRow {
    pub steps: usize,
    pub nfe: usize,
    pub rtf_mean: f64,
    pub rtf_std: f64,
}

pub struct BenchOptions {
    pub clips: usize,
    pub clip_s: f64,
    pub steps: Vec<usize>,
    pub method: Method,
    pub seed: u64,
}

pub fn run(checkpoint: &Path, opts: &BenchOptions) -> CliResult<Vec<RtfRow>> {
    let model = Model::load(checkpoint)?;
    let mut cfg = model.ckpt.config.clone();
    cfg.corpus.duration_s = opts.clip_s;
    cfg.validate()?;
    let clips: Vec<Vec<f64>> = (0..opts.clips.max(1))
        .map(|i| Ok(generate(&cfg, entry_seed(opts.seed, 1_000_000 + i as u64))?.degraded))
        .collect::<CliResult<_>>()?;
    let mut rows = Vec::new();
    for &steps in &opts.steps {
        let how = opts.method.inference(steps, &model.ckpt)?;
        for _ in 0..WARMUP_RUNS {
            model.run(&clips[0], &how, opts.seed)?;
        }
        let mut rtfs = Vec::with_capacity(clips.len());
        let mut nfe = 0;
        for clip in &clips {
            let start = Instant::now();
            let (_, n) = model.run(clip, &how, opts.seed)?;
            let secs = start.elapsed().as_secs_f64();
            rtfs.push(secs / (clip.len() as f64 / crate::wav::SAMPLE_RATE as f64));
            nfe = n;
        }
        let mean = rtfs.iter().sum::<f64>() / rtfs.len() as f64;
        let var = if rtfs.len() > 1 {
            rtfs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (rtfs.len() - 1) as f64
        } else {
            0.0
        };
        let row = RtfRow { steps, nfe, rtf_mean: mean, rtf_std: var.sqrt() };
        println!("steps {} NFE {} RTF {:.4} ± {:.4}", row.steps, row.nfe, row.rtf_mean, row.rtf_std);
        rows.push(row);
    }
    Ok(rows)
}
