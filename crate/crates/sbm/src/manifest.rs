//! Tab-separated corpus manifest.
//!
//! ```text
//! # sbm manifest v1, 16000 Hz, paths relative to this file
//! # clean_path	degraded_path	seed	snr_db	t60	split
//! train/clean/00000.wav	train/degraded/00000.wav	8141...	3.25	0.41	train
//! ```
//!
//! `t60` is `-` for entries without reverberation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

pub const HEADER: &str = "# sbm manifest v1, 16000 Hz, paths relative to this file";
pub const COLUMNS: &str = "# clean_path\tdegraded_path\tseed\tsnr_db\tt60\tsplit";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Split::ALL.into_iter().find(|x| x.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub clean_path: PathBuf,
    pub degraded_path: PathBuf,
    pub seed: u64,
    pub snr_db: f64,
    pub t60: Option<f64>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Manifest {
    /// Directory the relative paths resolve against.
    pub root: PathBuf,
    pub entries: Vec<Entry>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    pub fn render(&self) -> String {
        let mut out = format!("{HEADER}\n{COLUMNS}\n");
        for e in &self.entries {
            let t60 = e.t60.map_or("-".to_string(), |v| format!("{v}"));
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.clean_path.display(),
                e.degraded_path.display(),
                e.seed,
                e.snr_db,
                t60,
                e.split.name()
            )
            .unwrap();
        }
        out
    }

    /// Parses manifest text without touching the file system.
    pub fn parse(text: &str, root: &Path, origin: &str) -> CliResult<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |m: String| CliError::Data(format!("{origin}:{}: {m}", i + 1));
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad(format!("expected 6 tab-separated fields, found {}", f.len())));
            }
            let seed = f[2].parse().map_err(|_| bad(format!("bad seed {:?}", f[2])))?;
            let snr_db = f[3].parse().map_err(|_| bad(format!("bad snr_db {:?}", f[3])))?;
            let t60 = match f[4] {
                "-" => None,
                s => Some(s.parse().map_err(|_| bad(format!("bad t60 {s:?}")))?),
            };
            let split = Split::parse(f[5]).ok_or_else(|| bad(format!("unknown split {:?}", f[5])))?;
            entries.push(Entry {
                clean_path: f[0].into(),
                degraded_path: f[1].into(),
                seed,
                snr_db,
                t60,
                split,
            });
        }
        let m = Manifest { root: root.to_path_buf(), entries };
        m.check_disjoint()?;
        Ok(m)
    }

    /// Loads a manifest and checks that every referenced file exists.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let m = Self::parse(&text, &root, &path.display().to_string())?;
        let missing: Vec<String> = m
            .entries
            .iter()
            .flat_map(|e| [&e.clean_path, &e.degraded_path])
            .filter(|p| !m.resolve(p).is_file())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(CliError::Data(format!("{}: missing files: {}", path.display(), missing.join(", "))));
        }
        Ok(m)
    }

    fn check_disjoint(&self) -> CliResult<()> {
        let mut owner: HashMap<&Path, Split> = HashMap::new();
        for e in &self.entries {
            for p in [&e.clean_path, &e.degraded_path] {
                if let Some(&s) = owner.get(p.as_path()) {
                    if s != e.split {
                        return Err(CliError::Data(format!(
                            "{} appears in both {} and {}",
                            p.display(),
                            s.name(),
                            e.split.name()
                        )));
                    }
                }
                owner.insert(p, e.split);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(i: usize, split: Split) -> Entry {
        Entry {
            clean_path: format!("c/{i}.wav").into(),
            degraded_path: format!("d/{i}.wav").into(),
            seed: i as u64 * 7,
            snr_db: -2.5 + i as f64,
            t60: (i % 2 == 0).then_some(0.25),
            split,
        }
    }

    #[test]
    fn render_parse_round_trip() {
        let m = Manifest { root: "r".into(), entries: vec![entry(0, Split::Train), entry(1, Split::Test)] };
        let text = m.render();
        assert!(text.starts_with(HEADER));
        assert_eq!(Manifest::parse(&text, Path::new("r"), "m").unwrap(), m);
    }

    #[test]
    fn shared_entries_are_rejected() {
        let mut m = Manifest { root: "r".into(), entries: vec![entry(0, Split::Train), entry(0, Split::Val)] };
        assert!(Manifest::parse(&m.render(), Path::new("r"), "m").is_err());
        m.entries[1].split = Split::Train;
        assert!(Manifest::parse(&m.render(), Path::new("r"), "m").is_ok());
    }

    #[test]
    fn malformed_lines_report_position() {
        let err = Manifest::parse(&format!("{HEADER}\na\tb\n"), Path::new("."), "m.tsv").unwrap_err();
        assert!(err.to_string().contains("m.tsv:2"));
        let err = Manifest::parse("a\tb\tx\t1\t-\ttrain\n", Path::new("."), "m.tsv").unwrap_err();
        assert!(err.to_string().contains("seed"));
    }
}
