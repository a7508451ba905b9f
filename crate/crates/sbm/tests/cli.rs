use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sbm::manifest::{Manifest, Split};

const BIN: &str = env!("CARGO_BIN_EXE_sbm");

const SMALL: &str = "\
[corpus]
train_clips = 4
val_clips = 2
test_clips = 3
duration_s = 1.0

[model]
n_blocks = 1
d_model = 8
d_state = 4

[train]
steps = 6
batch_size = 2
crop_s = 0.25
checkpoint_every = 3
log_every = 1
";

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("SBM_THREADS", "1").output().expect("spawn sbm")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "sbm {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("config.toml"), config).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> PathBuf {
        self.path("config.toml")
    }

    fn synth(&self) -> PathBuf {
        let data = self.path("data");
        ok(&["synth", "--config", s(&self.config()), "--out", s(&data)]);
        data.join("manifest.tsv")
    }

    fn train(&self, manifest: &Path, out: &str, extra: &[&str]) -> PathBuf {
        let (out, config) = (self.path(out), self.config());
        let mut args = vec!["train", "--config", s(&config), "--manifest", s(manifest), "--out", s(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        out.join("checkpoints/latest.sbmc")
    }
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_idempotent_with_disjoint_splits() {
    let f = Fixture::new(SMALL);
    let manifest = f.synth();
    let (a, b) = (f.path("data"), f.path("again"));
    ok(&["synth", "--config", s(&f.config()), "--out", s(&b)]);
    let names = files_under(&a);
    assert_eq!(names, files_under(&b));
    assert!(names.iter().any(|n| n.extension().is_some_and(|e| e == "wav")));
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{}", n.display());
    }

    let m = Manifest::load(&manifest).unwrap();
    let counts: Vec<usize> = Split::ALL.iter().map(|&sp| m.split(sp).count()).collect();
    assert_eq!(counts, [4, 2, 3]);
    let mut seeds: Vec<u64> = m.entries.iter().map(|e| e.seed).collect();
    seeds.sort();
    seeds.dedup();
    assert_eq!(seeds.len(), m.entries.len());
    assert!(fs::read_to_string(a.join("config.toml")).unwrap().contains("train_clips = 4"));
}

#[test]
fn fixed_snr_range_is_recorded_exactly() {
    let f = Fixture::new(&SMALL.replace("duration_s = 1.0", "duration_s = 1.0\nsnr_db = [5.0, 5.0]"));
    let m = Manifest::load(&f.synth()).unwrap();
    assert!(m.entries.iter().all(|e| e.snr_db == 5.0));
}

#[test]
fn zero_steps_writes_only_the_initial_checkpoint() {
    let f = Fixture::new(SMALL);
    let manifest = f.synth();
    let ckpt = f.train(&manifest, "run", &["--steps", "0"]);
    assert!(ckpt.is_file());
    let names: Vec<PathBuf> = files_under(&f.path("run/checkpoints"));
    assert_eq!(names, [PathBuf::from("latest.sbmc"), PathBuf::from("step_000000.sbmc")]);
    assert_eq!(fs::read_to_string(f.path("run/metrics.tsv")).unwrap(), format!("{}\n", sbm::cmd::train::METRICS_HEADER));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let f = Fixture::new(SMALL);
    let manifest = f.synth();
    let full = f.train(&manifest, "full", &[]);

    // Simulate an interruption after the step-3 checkpoint, with rows past
    // it already logged.
    let partial = f.path("partial/checkpoints");
    fs::create_dir_all(&partial).unwrap();
    fs::copy(f.path("full/checkpoints/step_000003.sbmc"), partial.join("latest.sbmc")).unwrap();
    fs::copy(f.path("full/metrics.tsv"), f.path("partial/metrics.tsv")).unwrap();
    let resumed = f.train(&manifest, "partial", &[]);

    assert_eq!(fs::read(&full).unwrap(), fs::read(&resumed).unwrap());
    let log = |dir: &str| fs::read_to_string(f.path(dir).join("metrics.tsv")).unwrap();
    let strip = |text: String| -> Vec<String> {
        text.lines().map(|l| l.rsplit_once('\t').map_or(l, |(head, _)| head).to_string()).collect()
    };
    assert_eq!(strip(log("full")), strip(log("partial")));
}

#[test]
fn resuming_with_another_config_is_refused() {
    let f = Fixture::new(SMALL);
    let manifest = f.synth();
    f.train(&manifest, "run", &["--steps", "0"]);
    let out = f.path("run");
    assert_eq!(
        code(&["train", "--config", s(&f.config()), "--manifest", s(&manifest), "--out", s(&out), "--steps", "2"]),
        1
    );
}

#[test]
fn one_step_and_single_ode_step_write_identical_bytes() {
    let f = Fixture::new(SMALL);
    let manifest = f.synth();
    let ckpt = f.train(&manifest, "run", &[]);
    let input = f.path("data/test/degraded/00000.wav");
    let (a, b, c) = (f.path("a.wav"), f.path("b.wav"), f.path("c.wav"));
    let one = ok(&["enhance", "--checkpoint", s(&ckpt), "--input", s(&input), "--output", s(&a)]);
    let ode = ok(&[
        "enhance", "--checkpoint", s(&ckpt), "--input", s(&input), "--output", s(&b), "--mode", "ode", "--steps", "1",
    ]);
    assert_eq!(one.trim(), "NFE 1");
    assert_eq!(ode.trim(), "NFE 1");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let sde = ok(&[
        "enhance", "--checkpoint", s(&ckpt), "--input", s(&input), "--output", s(&c), "--mode", "sde", "--steps", "4",
    ]);
    assert_eq!(sde.trim(), "NFE 4");
    assert_eq!(sbm::wav::read(&c).unwrap().len(), sbm::wav::read(&input).unwrap().len());
    assert_eq!(code(&["enhance", "--checkpoint", s(&ckpt), "--input", s(&input), "--output", s(&c), "--steps", "3"]), 1);
}

#[test]
fn predictive_checkpoint_rejects_iterative_sampling() {
    let f = Fixture::new(SMALL);
    let manifest = f.synth();
    let ckpt = f.train(&manifest, "base", &["--mode", "mamba-base", "--steps", "0"]);
    let input = f.path("data/test/degraded/00000.wav");
    let out = f.path("out.wav");
    let enhance = |steps| {
        code(&["enhance", "--checkpoint", s(&ckpt), "--input", s(&input), "--output", s(&out), "--mode", "sde", "--steps", steps])
    };
    assert_eq!(enhance("5"), 1);
    assert!(!out.exists());
    assert_eq!(enhance("1"), 0);
}

#[test]
fn wrong_sample_rate_is_a_data_error() {
    let f = Fixture::new(SMALL);
    let manifest = f.synth();
    let ckpt = f.train(&manifest, "run", &["--steps", "0"]);
    let input = f.path("8k.wav");
    let spec = hound::WavSpec { channels: 1, sample_rate: 8000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(&input, spec).unwrap();
    for i in 0..800 {
        w.write_sample((i % 100) as i16 * 50).unwrap();
    }
    w.finalize().unwrap();
    let out = f.path("out.wav");
    assert_eq!(code(&["enhance", "--checkpoint", s(&ckpt), "--input", s(&input), "--output", s(&out)]), 3);
    assert!(!out.exists());
}

fn copy_split(manifest: &Manifest, pick: impl Fn(&sbm::manifest::Entry) -> PathBuf, dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    for e in manifest.split(Split::Test) {
        fs::copy(manifest.resolve(&pick(e)), dir.join(e.degraded_path.file_name().unwrap())).unwrap();
    }
}

fn table(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split('\t').map(String::from).collect()).collect()
}

#[test]
fn eval_of_clean_and_degraded_copies() {
    let f = Fixture::new(SMALL);
    let manifest_path = f.synth();
    let m = Manifest::load(&manifest_path).unwrap();

    let clean = f.path("clean-copies");
    copy_split(&m, |e| e.clean_path.clone(), &clean);
    ok(&["eval", "--manifest", s(&manifest_path), "--enhanced", s(&clean)]);
    let files = table(&clean.join("eval_files.tsv"));
    assert_eq!(files.len(), 3);
    for row in &files {
        assert_eq!(row[1].parse::<f64>().unwrap(), 100.0);
        assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);
    }

    let degraded = f.path("degraded-copies");
    copy_split(&m, |e| e.degraded_path.clone(), &degraded);
    ok(&["eval", "--manifest", s(&manifest_path), "--enhanced", s(&degraded)]);
    let summary = table(&degraded.join("eval_summary.tsv"));
    assert_eq!(summary[0][0], "enhanced");
    assert_eq!(summary[1][0], "no-op");
    assert_eq!(summary[0][1..], summary[1][1..]);

    let per_file = table(&degraded.join("eval_files.tsv"));
    let mean = per_file.iter().map(|r| r[1].parse::<f64>().unwrap()).sum::<f64>() / per_file.len() as f64;
    assert!((mean - summary[0][2].parse::<f64>().unwrap()).abs() < 1e-6);
    let report = sbm::cmd::eval::score(&m, Split::Test, &degraded).unwrap();
    let exact = report.files.iter().map(|r| r.si_sdr).sum::<f64>() / report.files.len() as f64;
    assert!((report.enhanced().si_sdr - exact).abs() < 1e-9);
}

#[test]
fn eval_lists_missing_files_and_still_reports() {
    let f = Fixture::new(SMALL);
    let manifest_path = f.synth();
    let m = Manifest::load(&manifest_path).unwrap();
    let dir = f.path("partial");
    copy_split(&m, |e| e.degraded_path.clone(), &dir);
    fs::remove_file(dir.join("00001.wav")).unwrap();
    let out = run(&["eval", "--manifest", s(&manifest_path), "--enhanced", s(&dir)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("00001.wav"));
    assert_eq!(table(&dir.join("eval_files.tsv")).len(), 2);
}

#[test]
fn config_errors_exit_with_code_two() {
    let f = Fixture::new("[model]\nd_modle = 8\n");
    let out = run(&["synth", "--config", s(&f.config()), "--out", s(&f.path("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(":2:1") && err.contains("d_modle"), "{err}");

    fs::write(f.config(), "[train]\nbatch_size = 0\n").unwrap();
    let out = run(&["synth", "--config", s(&f.config()), "--out", s(&f.path("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.batch_size"));
    assert_eq!(code(&["synth", "--config", s(&f.path("missing.toml")), "--out", s(&f.path("x"))]), 2);
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["enhance", "--checkpoint", "x.sbmc"]), 1);
}

#[test]
fn diverging_run_keeps_the_last_good_checkpoint() {
    let f = Fixture::new(&SMALL.replace("[train]", "[optim]\nlr = 1e30\nclip_norm = 0.0\nwarmup_steps = 0\n\n[train]"));
    let manifest = f.synth();
    let out = f.path("run");
    let status = code(&["train", "--config", s(&f.config()), "--manifest", s(&manifest), "--out", s(&out)]);
    assert_eq!(status, 4);
    let ckpt = sbm::checkpoint::Checkpoint::load(&out.join("checkpoints/latest.sbmc")).unwrap();
    assert!(ckpt.params.iter().all(|(_, t)| t.is_finite()));
    assert!(ckpt.step < 6);
}

#[test]
fn warm_start_across_modes_needs_the_drop_flag() {
    let f = Fixture::new(SMALL);
    let manifest = f.synth();
    let sbm_ckpt = f.train(&manifest, "sbm", &["--steps", "0"]);
    let base = f.path("base");
    let args = |extra: &[&'static str]| {
        let mut v: Vec<String> = ["train", "--config", s(&f.config()), "--manifest", s(&manifest), "--out", s(&base)]
            .iter()
            .map(|a| a.to_string())
            .collect();
        v.extend(["--mode", "mamba-base", "--steps", "0", "--init-from", s(&sbm_ckpt)].map(String::from));
        v.extend(extra.iter().map(|a| a.to_string()));
        v
    };
    let call = |v: Vec<String>| code(&v.iter().map(String::as_str).collect::<Vec<_>>());
    assert_ne!(call(args(&[])), 0);
    assert_eq!(call(args(&["--drop-time-params"])), 0);
}

#[test]
fn bench_reports_nfe_per_step_count() {
    let f = Fixture::new(SMALL);
    let manifest = f.synth();
    let ckpt = f.train(&manifest, "run", &["--steps", "0"]);
    let out = ok(&["bench-rtf", "--checkpoint", s(&ckpt), "--clips", "1", "--clip-s", "0.5", "--steps", "1,3"]);
    let nfe: Vec<&str> = out.lines().map(|l| l.split_whitespace().nth(3).unwrap()).collect();
    assert_eq!(nfe, ["1", "3"]);
}
