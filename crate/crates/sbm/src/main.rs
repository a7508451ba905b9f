use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sbm::cmd::{bench, enhance, eval, selftest, synth, train};
use sbm::config::{ExperimentConfig, ModeName};
use sbm::manifest::Split;
use sbm::{CliError, CliResult};

/// Schrödinger bridge speech enhancement on a Mamba backbone.
#[derive(Parser)]
#[command(name = "sbm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainMode {
    Sbm,
    MambaBase,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    OneStep,
    Sde,
    Ode,
}

impl From<MethodArg> for enhance::Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::OneStep => enhance::Method::OneStep,
            MethodArg::Sde => enhance::Method::Sde,
            MethodArg::Ode => enhance::Method::Ode,
        }
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split {s:?}, expected train, val or test"))
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a paired corpus and its manifest.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the train split of a manifest.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<TrainMode>,
        /// Overrides the number of optimizer steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Initialize weights from another checkpoint.
        #[arg(long)]
        init_from: Option<PathBuf>,
        /// With --init-from, ignore timestep parameters the new model lacks.
        #[arg(long)]
        drop_time_params: bool,
    },
    /// Enhance one file or every degraded file of a manifest split.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "manifest", requires = "output")]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, requires = "out_dir")]
        manifest: Option<PathBuf>,
        #[arg(long, value_parser = parse_split, default_value = "test")]
        split: Split,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Inference mode.
        #[arg(long = "mode", value_enum, default_value = "one-step")]
        method: MethodArg,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        /// Seed of the sampler noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score enhanced files against the clean references of a split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_parser = parse_split, default_value = "test")]
        split: Split,
        #[arg(long)]
        enhanced: PathBuf,
        /// Directory for the report files; defaults to the enhanced directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure the real-time factor for several step counts.
    BenchRtf {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        clips: usize,
        #[arg(long, default_value_t = 10.0)]
        clip_s: f64,
        #[arg(long, value_delimiter = ',', default_value = "1,10,50")]
        steps: Vec<usize>,
        /// Sampler used for every step count.
        #[arg(long = "mode", value_enum, default_value = "sde")]
        method: MethodArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the oracle suites.
    Selftest,
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth { cfg, out } => {
            synth::run(&cfg.load()?, &out)?;
        }
        Command::Train { cfg, manifest, out, mode, steps, init_from, drop_time_params } => {
            let mut c = cfg.load()?;
            if let Some(m) = mode {
                c.train.mode = match m {
                    TrainMode::Sbm => ModeName::Sbm,
                    TrainMode::MambaBase => ModeName::MambaBase,
                };
            }
            if let Some(s) = steps {
                c.train.steps = s;
            }
            c.validate()?;
            let s = train::run(&c, &train::TrainOptions { manifest, out, init_from, drop_time_params })?;
            if let Some(l) = s.smoothed_loss {
                println!("smoothed_loss {l:.6e}");
            }
            println!("checkpoint {}", s.checkpoint.display());
        }
        Command::Enhance { checkpoint, input, output, manifest, split, out_dir, method, steps, seed } => {
            let target = match (input, output, manifest, out_dir) {
                (Some(input), Some(output), None, _) => enhance::Target::File { input, output },
                (None, _, Some(manifest), Some(out_dir)) => enhance::Target::Split { manifest, split, out_dir },
                _ => return Err(CliError::Usage("give --input and --output, or --manifest and --out-dir".into())),
            };
            enhance::run(&checkpoint, &target, method.into(), steps, seed)?;
        }
        Command::Eval { manifest, split, enhanced, out } => {
            let out = out.unwrap_or_else(|| enhanced.clone());
            eval::run(&manifest, split, &enhanced, &out)?;
        }
        Command::BenchRtf { checkpoint, clips, clip_s, steps, method, seed } => {
            bench::run(&checkpoint, &bench::BenchOptions { clips, clip_s, steps, method: method.into(), seed })?;
        }
        Command::Selftest => {
            selftest::run()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sbm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
