//! `sbm eval`: SI-SDR and LSD of enhanced files against the clean
//! references of a manifest split.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sbm_core::metrics::{log_spectral_distance, si_sdr};

use crate::error::{CliError, CliResult};
use crate::manifest::{Manifest, Split};
use crate::wav;

pub const LSD_FFT: usize = 512;
pub const LSD_HOP: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct FileScore {
    pub file: String,
    pub si_sdr: f64,
    pub lsd: f64,
    /// Scores of the unprocessed degraded input.
    pub noop_si_sdr: f64,
    pub noop_lsd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub n: usize,
    pub si_sdr: f64,
    pub lsd: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub files: Vec<FileScore>,
    pub missing: Vec<PathBuf>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl Report {
    pub fn enhanced(&self) -> Aggregate {
        Aggregate {
            n: self.files.len(),
            si_sdr: mean(self.files.iter().map(|f| f.si_sdr)),
            lsd: mean(self.files.iter().map(|f| f.lsd)),
        }
    }

    pub fn noop(&self) -> Aggregate {
        Aggregate {
            n: self.files.len(),
            si_sdr: mean(self.files.iter().map(|f| f.noop_si_sdr)),
            lsd: mean(self.files.iter().map(|f| f.noop_lsd)),
        }
    }

    pub fn per_file_tsv(&self) -> String {
        let mut s = String::from("file\tsi_sdr\tlsd\tnoop_si_sdr\tnoop_lsd\n");
        for f in &self.files {
            writeln!(s, "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}", f.file, f.si_sdr, f.lsd, f.noop_si_sdr, f.noop_lsd).unwrap();
        }
        s
    }

    pub fn summary_tsv(&self) -> String {
        let mut s = String::from("system\tn\tsi_sdr\tlsd\n");
        for (name, a) in [("enhanced", self.enhanced()), ("no-op", self.noop())] {
            writeln!(s, "{name}\t{}\t{:.6}\t{:.6}", a.n, a.si_sdr, a.lsd).unwrap();
        }
        s
    }

    pub fn pretty(&self) -> String {
        let (e, b) = (self.enhanced(), self.noop());
        let mut s = format!("{:<10} {:>5} {:>10} {:>10}\n", "system", "files", "SI-SDR dB", "LSD dB");
        for (name, a) in [("enhanced", &e), ("no-op", &b)] {
            writeln!(s, "{name:<10} {:>5} {:>10.3} {:>10.3}", a.n, a.si_sdr, a.lsd).unwrap();
        }
        writeln!(s, "SI-SDR improvement {:+.3} dB", e.si_sdr - b.si_sdr).unwrap();
        if !self.missing.is_empty() {
            writeln!(s, "{} file(s) missing", self.missing.len()).unwrap();
        }
        s
    }
}

pub fn score(manifest: &Manifest, split: Split, enhanced_dir: &Path) -> CliResult<Report> {
    let mut report = Report::default();
    for e in manifest.split(split) {
        let name = e.degraded_path.file_name().expect("manifest paths name files");
        let enhanced_path = enhanced_dir.join(name);
        if !enhanced_path.is_file() {
            report.missing.push(enhanced_path);
            continue;
        }
        let clean = wav::read(&manifest.resolve(&e.clean_path))?;
        let degraded = wav::read(&manifest.resolve(&e.degraded_path))?;
        let enhanced = wav::read(&enhanced_path)?;
        if enhanced.len() != clean.len() {
            return Err(CliError::Data(format!(
                "{}: {} samples, reference has {}",
                enhanced_path.display(),
                enhanced.len(),
                clean.len()
            )));
        }
        report.files.push(FileScore {
            file: name.to_string_lossy().into_owned(),
            si_sdr: si_sdr(&clean, &enhanced)?,
            lsd: log_spectral_distance(&clean, &enhanced, LSD_FFT, LSD_HOP)?,
            noop_si_sdr: si_sdr(&clean, &degraded)?,
            noop_lsd: log_spectral_distance(&clean, &degraded, LSD_FFT, LSD_HOP)?,
        });
    }
    Ok(report)
}

/// Scores the split, writes `eval_files.tsv` and `eval_summary.tsv` to
/// `out_dir` and prints the summary. Missing files are listed and make the
/// command fail after the partial report is written.
pub fn run(manifest: &Path, split: Split, enhanced_dir: &Path, out_dir: &Path) -> CliResult<Report> {
    let m = Manifest::load(manifest)?;
    let report = score(&m, split, enhanced_dir)?;
    crate::io::write_atomic(&out_dir.join("eval_files.tsv"), report.per_file_tsv().as_bytes())?;
    crate::io::write_atomic(&out_dir.join("eval_summary.tsv"), report.summary_tsv().as_bytes())?;
    print!("{}", report.pretty());
    for p in &report.missing {
        eprintln!("eval: missing {}", p.display());
    }
    if !report.missing.is_empty() {
        return Err(CliError::Data(format!("{} enhanced file(s) missing", report.missing.len())));
    }
    Ok(report)
}
