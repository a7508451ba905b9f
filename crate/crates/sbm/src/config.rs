//! Experiment configuration: one TOML file with a section per subsystem.
//!
//! Every field has a default, so an empty file is a valid config. Unknown
//! keys are rejected with the line and column of the offending entry.

use std::path::Path;

use serde::{Deserialize, Serialize};

use sbm_core::backbone::BackboneConfig;
use sbm_core::bridge::{BridgeSchedule, NoiseConvention};
use sbm_core::data::{CleanKind, DegradationSpec, NoiseKind, RirSpec};
use sbm_core::loss::LossWeights;
use sbm_core::optim::{AdamWConfig, LrSchedule};
use sbm_core::signal::{SpecTransform, StftConfig};
use sbm_core::ssm::ScanImpl;
use sbm_core::train::{Mode, TrainerConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusSection,
    pub stft: StftSection,
    pub model: ModelSection,
    pub bridge: BridgeSection,
    pub loss: LossSection,
    pub optim: OptimSection,
    pub train: TrainSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            corpus: CorpusSection::default(),
            stft: StftSection::default(),
            model: ModelSection::default(),
            bridge: BridgeSection::default(),
            loss: LossSection::default(),
            optim: OptimSection::default(),
            train: TrainSection::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    HarmonicVoice,
    Chirp,
    NoiseBurstSentence,
}

impl From<SourceKind> for CleanKind {
    fn from(k: SourceKind) -> Self {
        match k {
            SourceKind::HarmonicVoice => CleanKind::HarmonicVoice,
            SourceKind::Chirp => CleanKind::Chirp,
            SourceKind::NoiseBurstSentence => CleanKind::NoiseBurstSentence,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseName {
    White,
    Pink,
    Babble,
}

impl From<NoiseName> for NoiseKind {
    fn from(k: NoiseName) -> Self {
        match k {
            NoiseName::White => NoiseKind::White,
            NoiseName::Pink => NoiseKind::Pink,
            NoiseName::Babble => NoiseKind::Babble,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub train_clips: usize,
    pub val_clips: usize,
    pub test_clips: usize,
    pub duration_s: f64,
    pub kinds: Vec<SourceKind>,
    pub snr_db: [f64; 2],
    /// `false` disables reverberation.
    pub reverb: bool,
    pub t60_s: [f64; 2],
    pub rir_length: usize,
    pub noise: Vec<NoiseName>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            train_clips: 200,
            val_clips: 20,
            test_clips: 20,
            duration_s: 2.0,
            kinds: vec![SourceKind::HarmonicVoice, SourceKind::Chirp, SourceKind::NoiseBurstSentence],
            snr_db: [-10.0, 20.0],
            reverb: true,
            t60_s: [0.1, 0.6],
            rir_length: 4096,
            noise: vec![NoiseName::White, NoiseName::Pink, NoiseName::Babble],
        }
    }
}

impl CorpusSection {
    pub fn degradation(&self) -> DegradationSpec {
        DegradationSpec {
            snr_db: (self.snr_db[0], self.snr_db[1]),
            rir: if self.reverb {
                RirSpec::Synthetic { t60_range: (self.t60_s[0], self.t60_s[1]), length: self.rir_length }
            } else {
                RirSpec::None
            },
            noise: self.noise.iter().map(|&n| n.into()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformName {
    None,
    Compress,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftSection {
    pub n_fft: usize,
    pub hop: usize,
    pub transform: TransformName,
    pub compress_alpha: f64,
    pub compress_beta: f64,
}

impl Default for StftSection {
    fn default() -> Self {
        Self { n_fft: 512, hop: 128, transform: TransformName::None, compress_alpha: 0.5, compress_beta: 1.0 }
    }
}

impl StftSection {
    pub fn stft(&self) -> sbm_core::Result<StftConfig> {
        StftConfig::new(self.n_fft, self.hop, sbm_core::data::SAMPLE_RATE)
    }

    pub fn transform(&self) -> SpecTransform {
        match self.transform {
            TransformName::None => SpecTransform::None,
            TransformName::Compress => SpecTransform::Compress { alpha: self.compress_alpha, beta: self.compress_beta },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanName {
    Sequential,
    Parallel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_blocks: usize,
    pub d_model: usize,
    pub d_state: usize,
    pub expand: usize,
    pub conv_width: usize,
    pub tf_compress: [usize; 2],
    pub time_causal: bool,
    pub fourier_dim: usize,
    pub fourier_scale: f64,
    pub train_fourier_freqs: bool,
    pub zero_init_output: bool,
    pub scan: ScanName,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = BackboneConfig::default();
        Self {
            n_blocks: d.n_blocks,
            d_model: d.d_model,
            d_state: d.d_state,
            expand: d.expand,
            conv_width: d.conv_width,
            tf_compress: [d.tf_compress.0, d.tf_compress.1],
            time_causal: d.time_causal,
            fourier_dim: d.fourier_dim,
            fourier_scale: d.fourier_scale,
            train_fourier_freqs: d.train_fourier_freqs,
            zero_init_output: d.zero_init_output,
            scan: ScanName::Sequential,
        }
    }
}

impl ModelSection {
    pub fn backbone(&self, mode: Mode) -> BackboneConfig {
        BackboneConfig {
            n_blocks: self.n_blocks,
            d_model: self.d_model,
            d_state: self.d_state,
            expand: self.expand,
            conv_width: self.conv_width,
            tf_compress: (self.tf_compress[0], self.tf_compress[1]),
            time_causal: self.time_causal,
            timestep: mode.uses_time(),
            fourier_dim: self.fourier_dim,
            fourier_scale: self.fourier_scale,
            train_fourier_freqs: self.train_fourier_freqs,
            zero_init_output: self.zero_init_output,
            scan: match self.scan {
                ScanName::Sequential => ScanImpl::Sequential,
                ScanName::Parallel => ScanImpl::Parallel,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConventionName {
    Split,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeSection {
    pub c: f64,
    pub k: f64,
    pub t_eps: f64,
    pub noise_convention: ConventionName,
}

impl Default for BridgeSection {
    fn default() -> Self {
        let d = BridgeSchedule::default();
        Self { c: d.c, k: d.k, t_eps: d.t_eps, noise_convention: ConventionName::Split }
    }
}

impl BridgeSection {
    pub fn schedule(&self) -> sbm_core::Result<BridgeSchedule> {
        BridgeSchedule::new(self.c, self.k, self.t_eps)
    }

    pub fn convention(&self) -> NoiseConvention {
        match self.noise_convention {
            ConventionName::Split => NoiseConvention::Split,
            ConventionName::Full => NoiseConvention::Full,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    /// Weights of complex, magnitude, multi-resolution complex and
    /// multi-resolution magnitude terms.
    pub lambda: [f64; 4],
    pub mr_resolutions: Vec<[usize; 2]>,
}

impl Default for LossSection {
    fn default() -> Self {
        let d = LossWeights::default();
        Self { lambda: d.lambda, mr_resolutions: d.mr_resolutions.iter().map(|&(n, h)| [n, h]).collect() }
    }
}

impl LossSection {
    pub fn weights(&self) -> LossWeights {
        LossWeights { lambda: self.lambda, mr_resolutions: self.mr_resolutions.iter().map(|r| (r[0], r[1])).collect() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleName {
    WarmupCosine,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    /// `0` disables clipping.
    pub clip_norm: f64,
    pub schedule: ScheduleName,
}

impl Default for OptimSection {
    fn default() -> Self {
        let d = AdamWConfig::default();
        Self {
            lr: d.lr_base,
            betas: [d.betas.0, d.betas.1],
            eps: d.eps,
            weight_decay: d.weight_decay,
            warmup_steps: d.warmup_steps,
            clip_norm: d.clip_norm.unwrap_or(0.0),
            schedule: ScheduleName::WarmupCosine,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Sbm,
    MambaBase,
}

impl From<ModeName> for Mode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Sbm => Mode::Sbm,
            ModeName::MambaBase => Mode::Predictive,
        }
    }
}

impl From<Mode> for ModeName {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Sbm => ModeName::Sbm,
            Mode::Predictive => ModeName::MambaBase,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub mode: ModeName,
    pub steps: usize,
    pub batch_size: usize,
    pub crop_s: f64,
    /// Scale each training pair by the RMS of its degraded side.
    pub normalize: bool,
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            mode: ModeName::Sbm,
            steps: 2000,
            batch_size: 4,
            crop_s: 0.5,
            normalize: true,
            checkpoint_every: 250,
            log_every: 10,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text. `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let loc = e.span().map(|s| line_col(text, s.start)).map(|(l, c)| format!(":{l}:{c}")).unwrap_or_default();
            CliError::Config(format!("{origin}{loc}: {}", e.message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the effective config next to a run's outputs.
    pub fn echo(&self, dir: &Path) -> CliResult<()> {
        crate::io::write_atomic(&dir.join("config.toml"), self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> CliResult<()> {
        let field = |name: &str, msg: String| Err(CliError::Config(format!("{name}: {msg}")));
        let c = &self.corpus;
        if c.train_clips == 0 {
            return field("corpus.train_clips", "must be positive".into());
        }
        if !(0.5..=10.0).contains(&c.duration_s) {
            return field("corpus.duration_s", format!("{} is outside [0.5, 10]", c.duration_s));
        }
        if c.kinds.is_empty() {
            return field("corpus.kinds", "at least one source kind is required".into());
        }
        c.degradation().validate().or_else(|e| field("corpus", e.to_string()))?;
        self.stft.stft().map(|_| ()).or_else(|e| field("stft", e.to_string()))?;
        self.stft.transform().validate().or_else(|e| field("stft.transform", e.to_string()))?;
        let mode = Mode::from(self.train.mode);
        self.model.backbone(mode).validate().or_else(|e| field("model", e.to_string()))?;
        self.bridge.schedule().map(|_| ()).or_else(|e| field("bridge", e.to_string()))?;
        self.loss.weights().validate(sbm_core::data::SAMPLE_RATE).or_else(|e| field("loss", e.to_string()))?;
        self.optimizer(self.train.steps).validate().or_else(|e| field("optim", e.to_string()))?;
        let t = &self.train;
        if t.batch_size == 0 {
            return field("train.batch_size", "must be positive".into());
        }
        if !(t.crop_s > 0.0) || self.crop_samples() < self.stft.n_fft {
            return field("train.crop_s", format!("{} s is shorter than one STFT frame", t.crop_s));
        }
        if t.checkpoint_every == 0 || t.log_every == 0 {
            return field("train", "checkpoint_every and log_every must be positive".into());
        }
        Ok(())
    }

    pub fn crop_samples(&self) -> usize {
        (self.train.crop_s * sbm_core::data::SAMPLE_RATE as f64).round() as usize
    }

    pub fn optimizer(&self, total_steps: usize) -> AdamWConfig {
        let o = &self.optim;
        AdamWConfig {
            lr_base: o.lr,
            betas: (o.betas[0], o.betas[1]),
            eps: o.eps,
            weight_decay: o.weight_decay,
            warmup_steps: o.warmup_steps,
            total_steps,
            clip_norm: (o.clip_norm > 0.0).then_some(o.clip_norm),
            schedule: match o.schedule {
                ScheduleName::WarmupCosine => LrSchedule::WarmupCosine,
                ScheduleName::Constant => LrSchedule::Constant,
            },
        }
    }

    pub fn trainer(&self) -> CliResult<TrainerConfig> {
        let mode = Mode::from(self.train.mode);
        Ok(TrainerConfig {
            mode,
            backbone: self.model.backbone(mode),
            optimizer: self.optimizer(self.train.steps),
            loss: self.loss.weights(),
            stft: self.stft.stft()?,
            sched: self.bridge.schedule()?,
            convention: self.bridge.convention(),
            transform: self.stft.transform(),
            seed: self.seed,
        })
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}
