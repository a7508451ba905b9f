//! Model checkpoints.
//!
//! ```text
//! b"SBMC" | version: u32 | header length: u64 | JSON header
//!   | one SBMT tensor per parameter, in header order
//!   | if the header says so: first moments, then second moments, same order
//! ```
//!
//! The header carries the effective experiment config, so a checkpoint is
//! enough to rebuild the model it came from.

use std::path::Path;

use serde::{Deserialize, Serialize};

use sbm_core::backbone::Backbone;
use sbm_core::tensor::snapshot;
use sbm_core::train::{Mode, Trainer};
use sbm_core::{ParamStore, Tensor};

use crate::config::{ExperimentConfig, ModeName};
use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"SBMC";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    mode: ModeName,
    step: usize,
    config: String,
    params: Vec<String>,
    optimizer: bool,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub mode: Mode,
    /// Optimizer updates applied before the checkpoint was written.
    pub step: usize,
    pub params: Vec<(String, Tensor<f32>)>,
    /// AdamW first and second moments, aligned with `params`.
    pub moments: Option<(Vec<Tensor<f32>>, Vec<Tensor<f32>>)>,
}

/// Parameters that only exist when the network takes a timestep.
pub fn is_time_param(name: &str) -> bool {
    name.starts_with("temb.") || name.contains(".t_proj.")
}

impl Checkpoint {
    pub fn from_trainer(config: &ExperimentConfig, t: &Trainer<f32>) -> Self {
        let params: Vec<(String, Tensor<f32>)> = t.store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect();
        let as_tensors = |moments: &[Vec<f32>]| -> Vec<Tensor<f32>> {
            params
                .iter()
                .zip(moments)
                .map(|((_, p), m)| Tensor::new(p.shape().to_vec(), m.clone()).expect("moment matches parameter"))
                .collect()
        };
        Self {
            config: config.clone(),
            mode: t.mode,
            step: t.opt.step,
            moments: Some((as_tensors(&t.opt.m), as_tensors(&t.opt.v))),
            params,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            mode: self.mode.into(),
            step: self.step,
            config: self.config.to_toml(),
            params: self.params.iter().map(|(name, _)| name.clone()).collect(),
            optimizer: self.moments.is_some(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.params {
            out.extend_from_slice(&snapshot::encode(t));
        }
        if let Some((m, v)) = &self.moments {
            for t in m.iter().chain(v) {
                out.extend_from_slice(&snapshot::encode(t));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> CliResult<Self> {
        let bad = |m: String| CliError::Data(format!("{origin}: {m}"));
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| bad(format!("header: {e}")))?;
        let config = ExperimentConfig::parse(&header.config, &format!("{origin} (embedded config)"))?;
        let mut pos = 16 + len;
        let mut next = || -> CliResult<Tensor<f32>> {
            let (t, used) = snapshot::decode::<f32>(&bytes[pos..]).map_err(|e| bad(e.to_string()))?;
            pos += used;
            Ok(t)
        };
        let mut params = Vec::with_capacity(header.params.len());
        for name in &header.params {
            params.push((name.clone(), next()?));
        }
        let moments = if header.optimizer {
            let m = (0..params.len()).map(|_| next()).collect::<CliResult<Vec<_>>>()?;
            let v = (0..params.len()).map(|_| next()).collect::<CliResult<Vec<_>>>()?;
            Some((m, v))
        } else {
            None
        };
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self { config, mode: header.mode.into(), step: header.step, params, moments })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    /// Copies the stored values into `store`. Every parameter of `store`
    /// must be present with the same shape. Extra stored parameters are an
    /// error, except timestep-conditioning ones when `drop_time_params` is
    /// set (bridge checkpoint into a predictive model).
    pub fn restore_params(&self, store: &mut ParamStore<f32>, drop_time_params: bool) -> CliResult<()> {
        for (name, _) in &self.params {
            if store.find(name).is_none() && !(drop_time_params && is_time_param(name)) {
                let hint = if is_time_param(name) { "; timestep parameters can be dropped explicitly" } else { "" };
                return Err(CliError::Usage(format!("checkpoint parameter {name} has no counterpart in the model{hint}")));
            }
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.get(id).name.clone();
            let value = self
                .params
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| CliError::Data(format!("checkpoint lacks parameter {name}")))?;
            store.set_value(id, value)?;
        }
        Ok(())
    }

    /// Rebuilds a trainer, including optimizer state, for resuming.
    pub fn trainer(&self) -> CliResult<Trainer<f32>> {
        let mut t = Trainer::<f32>::new(self.config.trainer()?)?;
        if t.mode != self.mode {
            return Err(CliError::Usage(format!("checkpoint mode {:?} does not match its config", self.mode)));
        }
        self.restore_params(&mut t.store, false)?;
        if let Some((m, v)) = &self.moments {
            t.opt.m = m.iter().map(|x| x.data().to_vec()).collect();
            t.opt.v = v.iter().map(|x| x.data().to_vec()).collect();
        }
        t.opt.step = self.step;
        Ok(t)
    }

    /// The network and its weights for inference.
    pub fn model(&self) -> CliResult<(Backbone, ParamStore<f32>)> {
        let t = Trainer::<f32>::new(self.config.trainer()?)?;
        let (backbone, mut store) = (t.backbone, t.store);
        self.restore_params(&mut store, false)?;
        Ok((backbone, store))
    }
}
