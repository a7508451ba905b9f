//! `sbm train`: fit a model on the train split of a manifest.
//!
//! Output layout:
//!
//! ```text
//! out/config.toml              effective config
//! out/metrics.tsv              one row per logged step
//! out/checkpoints/latest.sbmc  newest checkpoint, used for resuming
//! out/checkpoints/step_NNNNNN.sbmc
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sbm_core::data::{random_batch, Clip};
use sbm_core::enhance::normalize_rows;
use sbm_core::rng;
use sbm_core::train::{Batch, StepOutput, Trainer};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{Manifest, Split};
use crate::wav;

pub const METRICS_HEADER: &str = "step\tlr\tloss\tcomplex\tmagnitude\tmr_complex\tmr_magnitude\tgrad_norm\twall_s";

/// Stream offset separating batch sampling from the trainer's own draws.
const BATCH_STREAM: u64 = 0x6261_7463_6800_0000;

pub struct TrainOptions {
    pub manifest: PathBuf,
    pub out: PathBuf,
    /// Warm start from another checkpoint's weights.
    pub init_from: Option<PathBuf>,
    /// Allow `init_from` to carry timestep parameters the model lacks.
    pub drop_time_params: bool,
}

pub struct TrainSummary {
    pub steps: usize,
    pub final_loss: Option<f64>,
    /// Exponential moving average of the loss (factor 0.9).
    pub smoothed_loss: Option<f64>,
    pub checkpoint: PathBuf,
}

pub fn checkpoint_dir(out: &Path) -> PathBuf {
    out.join("checkpoints")
}

pub fn latest_checkpoint(out: &Path) -> PathBuf {
    checkpoint_dir(out).join("latest.sbmc")
}

pub fn load_clips(manifest: &Manifest, split: Split) -> CliResult<Vec<Clip>> {
    let to_f32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect();
    manifest
        .split(split)
        .map(|e| {
            Ok(Clip {
                clean: to_f32(wav::read(&manifest.resolve(&e.clean_path))?),
                degraded: to_f32(wav::read(&manifest.resolve(&e.degraded_path))?),
            })
        })
        .collect()
}

/// The batch used for update number `step`, drawn from its own substream
/// so that a resumed run sees the same data.
pub fn batch_for_step(cfg: &ExperimentConfig, clips: &[Clip], step: usize) -> CliResult<Batch<f32>> {
    let mut r = rng::substream(cfg.seed, BATCH_STREAM + step as u64);
    let (mut clean, mut degraded) = random_batch::<f32>(clips, cfg.train.batch_size, cfg.crop_samples(), &mut r)?;
    if cfg.train.normalize {
        normalize_rows(&mut clean, &mut degraded)?;
    }
    Ok(Batch { clean, degraded })
}

fn save(cfg: &ExperimentConfig, trainer: &Trainer<f32>, out: &Path) -> CliResult<PathBuf> {
    let ckpt = Checkpoint::from_trainer(cfg, trainer);
    let path = checkpoint_dir(out).join(format!("step_{:06}.sbmc", trainer.step_index()));
    ckpt.save(&path)?;
    ckpt.save(&latest_checkpoint(out))?;
    Ok(path)
}

fn metrics_row(step: usize, o: &StepOutput, wall: f64) -> String {
    let t = o.terms;
    format!(
        "{step}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{wall:.3}\n",
        o.lr, o.loss, t[0], t[1], t[2], t[3], o.grad_norm
    )
}

/// Keeps the header and the rows up to `step`, dropping any logged after
/// the checkpoint a run resumes from.
fn truncate_log(text: &str, step: usize) -> String {
    let mut out = String::new();
    for line in text.lines() {
        let keep = match line.split('\t').next().and_then(|s| s.parse::<usize>().ok()) {
            Some(s) => s <= step,
            None => line == METRICS_HEADER,
        };
        if keep {
            writeln!(out, "{line}").unwrap();
        }
    }
    if out.is_empty() {
        out = format!("{METRICS_HEADER}\n");
    }
    out
}

pub fn run(cfg: &ExperimentConfig, opts: &TrainOptions) -> CliResult<TrainSummary> {
    let out = &opts.out;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let latest = latest_checkpoint(out);
    let mut trainer = if latest.is_file() {
        let ckpt = Checkpoint::load(&latest)?;
        if ckpt.config != *cfg {
            return Err(CliError::Usage(format!(
                "{} holds a run with a different config; use a fresh output directory",
                out.display()
            )));
        }
        eprintln!("train: resuming from step {}", ckpt.step);
        ckpt.trainer()?
    } else {
        let mut t = Trainer::<f32>::new(cfg.trainer()?)?;
        if let Some(src) = &opts.init_from {
            Checkpoint::load(src)?.restore_params(&mut t.store, opts.drop_time_params)?;
        }
        t
    };
    cfg.echo(out)?;

    let start = trainer.step_index();
    let metrics_path = out.join("metrics.tsv");
    let mut log = match std::fs::read_to_string(&metrics_path) {
        Ok(text) if start > 0 => truncate_log(&text, start),
        _ => format!("{METRICS_HEADER}\n"),
    };
    crate::io::write_atomic(&metrics_path, log.as_bytes())?;

    let mut last = save(cfg, &trainer, out)?;
    let total = cfg.train.steps;
    if start >= total {
        eprintln!("train: nothing to do, checkpoint at step {start}");
        return Ok(TrainSummary { steps: start, final_loss: None, smoothed_loss: None, checkpoint: last });
    }
    let manifest = Manifest::load(&opts.manifest)?;
    let clips = load_clips(&manifest, Split::Train)?;
    if clips.is_empty() {
        return Err(CliError::Data(format!("{} has no train entries", opts.manifest.display())));
    }
    eprintln!(
        "train: mode {:?}, {} parameters, {} clips, steps {start}..{total}",
        cfg.train.mode,
        trainer.store.num_scalars(),
        clips.len()
    );

    let clock = Instant::now();
    let (mut final_loss, mut smoothed) = (None, None::<f64>);
    for step in start..total {
        let batch = batch_for_step(cfg, &clips, step)?;
        let o = match trainer.step(&batch) {
            Ok(o) => o,
            Err(e) => {
                crate::io::write_atomic(&metrics_path, log.as_bytes())?;
                eprintln!("train: aborted at step {step}; last good checkpoint {}", last.display());
                return Err(e.into());
            }
        };
        let done = step + 1;
        final_loss = Some(o.loss);
        smoothed = Some(smoothed.map_or(o.loss, |s| 0.9 * s + 0.1 * o.loss));
        if done % cfg.train.log_every == 0 || done == total {
            log.push_str(&metrics_row(done, &o, clock.elapsed().as_secs_f64()));
            eprintln!("step {done} loss {:.5} lr {:.2e} |g| {:.3}", o.loss, o.lr, o.grad_norm);
        }
        if done % cfg.train.checkpoint_every == 0 || done == total {
            crate::io::write_atomic(&metrics_path, log.as_bytes())?;
            last = save(cfg, &trainer, out)?;
        }
    }
    eprintln!("train: finished {total} steps in {:.1} s", clock.elapsed().as_secs_f64());
    Ok(TrainSummary { steps: total, final_loss, smoothed_loss: smoothed, checkpoint: last })
}
