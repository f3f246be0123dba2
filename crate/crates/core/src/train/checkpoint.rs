//! Checkpoints: a text magic line, a JSON header with the configs,
//! skeleton and counters, then the tensor container.
//!
//! ```text
//! "HOPFIR-CKPT 1\n"
//! u64 header length (little-endian), UTF-8 JSON header
//! HFT1 container: param/<name>, and with optimizer state adam.m/<name>, adam.v/<name>
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{HopFirConfig, HopFirModel};
use crate::scalar::Real;
use crate::skeleton::SkeletonGraph;
use crate::tensor::{read_container, write_container, Tensor};

pub const CHECKPOINT_MAGIC: &[u8] = b"HOPFIR-CKPT 1\n";

/// Everything needed to continue training.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub model: HopFirModel<T>,
    pub adam: Adam<T>,
    /// Epochs completed.
    pub epoch: usize,
    pub best_mpjpe_mm: Option<f64>,
}

impl<T: Real> TrainState<T> {
    pub fn new(model: HopFirModel<T>) -> Self {
        let adam = Adam::new(&model.params);
        TrainState {
            model,
            adam,
            epoch: 0,
            best_mpjpe_mm: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// `f32` or `f64`.
    pub precision: String,
    pub model: String,
    #[serde(default)]
    pub train: Option<String>,
    pub skeleton: String,
    pub step: u64,
    pub epoch: usize,
    #[serde(default)]
    pub best_mpjpe_mm: Option<f64>,
    pub has_optimizer: bool,
}

impl CheckpointHeader {
    pub fn model_config(&self) -> Result<HopFirConfig> {
        HopFirConfig::parse(&self.model)
    }

    pub fn train_config(&self) -> Result<Option<TrainConfig>> {
        self.train.as_deref().map(TrainConfig::parse).transpose()
    }
}

pub fn checkpoint_bytes<T: Real>(state: &TrainState<T>, train: Option<&TrainConfig>) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        precision: T::NAME.to_string(),
        model: state.model.config.to_text(),
        train: train.map(TrainConfig::to_text),
        skeleton: state.model.skeleton.to_text(),
        step: state.adam.step,
        epoch: state.epoch,
        best_mpjpe_mm: state.best_mpjpe_mm,
        has_optimizer: true,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let params = &state.model.params;
    let mut tensors: Vec<(String, Tensor<T>)> = params.iter().map(|(n, t)| (format!("param/{n}"), t.clone())).collect();
    for (prefix, moments) in [("adam.m", &state.adam.m), ("adam.v", &state.adam.v)] {
        tensors.extend(params.names().iter().zip(moments).map(|(n, t)| (format!("{prefix}/{n}"), t.clone())));
    }
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    write_container(&mut out, &tensors)?;
    Ok(out)
}

pub fn save_checkpoint<T: Real>(path: &Path, state: &TrainState<T>, train: Option<&TrainConfig>) -> Result<()> {
    let bytes = checkpoint_bytes(state, train)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn split_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    let rest = bytes
        .strip_prefix(CHECKPOINT_MAGIC)
        .ok_or_else(|| Error::Format("not a checkpoint (bad magic line)".into()))?;
    if rest.len() < 8 {
        return Err(Error::Format("truncated checkpoint header".into()));
    }
    let len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
    let body = &rest[8..];
    if body.len() < len {
        return Err(Error::Format("truncated checkpoint header".into()));
    }
    let header = serde_json::from_slice(&body[..len]).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    Ok((header, &body[len..]))
}

/// Header only, e.g. to choose the precision before loading.
pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(split_header(&bytes)?.0)
}

pub fn state_from_bytes<T: Real>(bytes: &[u8]) -> Result<(TrainState<T>, CheckpointHeader)> {
    let (header, body) = split_header(bytes)?;
    if header.precision != T::NAME {
        return Err(Error::Format(format!(
            "checkpoint holds {} parameters, loading as {}",
            header.precision,
            T::NAME
        )));
    }
    let config = header.model_config()?;
    let skeleton = SkeletonGraph::parse(&header.skeleton, config.hops)?;
    let mut model = HopFirModel::<T>::build(&config, &skeleton)?;
    let tensors: Vec<(String, Tensor<T>)> = read_container(&mut &body[..])?;
    let mut adam = Adam::new(&model.params);
    adam.step = header.step;
    let names = model.params.names().to_vec();
    let mut params = Vec::with_capacity(names.len());
    for (name, t) in tensors {
        if let Some(n) = name.strip_prefix("param/") {
            params.push((n.to_string(), t));
        } else if let Some((kind, n)) = name.split_once('/') {
            let i = names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| Error::Format(format!("optimizer state for unknown parameter {n:?}")))?;
            let slot = match kind {
                "adam.m" => &mut adam.m[i],
                "adam.v" => &mut adam.v[i],
                _ => return Err(Error::Format(format!("unknown checkpoint record {name:?}"))),
            };
            if slot.shape() != t.shape() {
                return Err(Error::shape("checkpoint", slot.shape(), t.shape()));
            }
            *slot = t;
        } else {
            return Err(Error::Format(format!("unknown checkpoint record {name:?}")));
        }
    }
    if params.len() != names.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, model expects {}",
            params.len(),
            names.len()
        )));
    }
    model.params.load(&params)?;
    let state = TrainState {
        model,
        adam,
        epoch: header.epoch,
        best_mpjpe_mm: header.best_mpjpe_mm,
    };
    Ok((state, header))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(TrainState<T>, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    state_from_bytes(&bytes)
}
