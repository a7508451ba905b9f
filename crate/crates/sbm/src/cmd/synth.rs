//! `sbm synth`: write a paired corpus and its manifest.

use std::path::{Path, PathBuf};

use rand::Rng as _;
use sbm_core::data::{degrade, synth_clean, Degraded};
use sbm_core::rng;

use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::manifest::{Entry, Manifest, Split};
use crate::{threads, wav};

/// Seed of corpus entry `index`, independent of how many entries exist.
pub fn entry_seed(base: u64, index: u64) -> u64 {
    rng::substream(base, index).random()
}

/// Regenerates one pair from its seed. The source kind is chosen by the
/// seed as well, so a manifest line and the config determine the audio.
pub fn generate(cfg: &ExperimentConfig, seed: u64) -> CliResult<Degraded> {
    let kinds = &cfg.corpus.kinds;
    let kind = kinds[(seed % kinds.len() as u64) as usize];
    let clean = synth_clean(kind.into(), cfg.corpus.duration_s, seed)?;
    Ok(degrade(&clean, &cfg.corpus.degradation(), seed ^ 0x9e37_79b9_7f4a_7c15)?)
}

pub fn run(cfg: &ExperimentConfig, out: &Path) -> CliResult<Manifest> {
    let c = &cfg.corpus;
    let mut jobs: Vec<(Split, usize, u64)> = Vec::new();
    let mut index = 0u64;
    for (split, count) in [(Split::Train, c.train_clips), (Split::Val, c.val_clips), (Split::Test, c.test_clips)] {
        for i in 0..count {
            jobs.push((split, i, entry_seed(cfg.seed, index)));
            index += 1;
        }
    }
    let make = |&(split, i, seed): &(Split, usize, u64)| -> CliResult<Entry> {
        let d = generate(cfg, seed)?;
        let name = format!("{i:05}.wav");
        let clean_path = PathBuf::from(split.name()).join("clean").join(&name);
        let degraded_path = PathBuf::from(split.name()).join("degraded").join(&name);
        wav::write(&out.join(&clean_path), &d.clean)?;
        wav::write(&out.join(&degraded_path), &d.degraded)?;
        Ok(Entry { clean_path, degraded_path, seed, snr_db: d.meta.snr_db, t60: d.meta.t60, split })
    };
    let entries = threads::map(&jobs, threads::count(), make)?;
    let manifest = Manifest { root: out.to_path_buf(), entries };
    crate::io::write_atomic(&out.join("manifest.tsv"), manifest.render().as_bytes())?;
    cfg.echo(out)?;
    eprintln!("synth: wrote {} pairs to {}", manifest.entries.len(), out.display());
    Ok(manifest)
}
