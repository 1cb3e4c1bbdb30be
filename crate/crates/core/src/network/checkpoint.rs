//! Safetensors checkpoints: raw parameters under their own names, EMA
//! weights under `ema.`, auxiliary tensors (optimizer moments) under their
//! caller-chosen names, and JSON metadata for the network configuration, the
//! noise schedule and any caller state.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};

use super::config::NetworkConfig;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};

pub const EMA_PREFIX: &str = "ema.";
pub const AUX_PREFIX: &str = "aux.";
const PARAM_PREFIX: &str = "param.";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    pub schedule: NoiseSchedule,
    pub params: BTreeMap<String, Tensor>,
    pub ema: Option<BTreeMap<String, Tensor>>,
    /// Extra tensors, e.g. optimizer moments.
    pub aux: BTreeMap<String, Tensor>,
    /// Extra string metadata, e.g. serialized trainer state.
    pub metadata: BTreeMap<String, String>,
}

fn serde_err(e: impl std::fmt::Display) -> Error {
    Error::Serde(e.to_string())
}

impl Checkpoint {
    pub fn new(network: NetworkConfig, schedule: NoiseSchedule, params: BTreeMap<String, Tensor>) -> Self {
        Self {
            network,
            schedule,
            params,
            ema: None,
            aux: BTreeMap::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tensors: Vec<(String, &Tensor)> = Vec::new();
        tensors.extend(self.params.iter().map(|(k, v)| (format!("{PARAM_PREFIX}{k}"), v)));
        if let Some(ema) = &self.ema {
            tensors.extend(ema.iter().map(|(k, v)| (format!("{EMA_PREFIX}{k}"), v)));
        }
        tensors.extend(self.aux.iter().map(|(k, v)| (format!("{AUX_PREFIX}{k}"), v)));
        let mut meta: HashMap<String, String> = self.metadata.iter().map(|(k, v)| (format!("user.{k}"), v.clone())).collect();
        meta.insert("network".into(), serde_json::to_string(&self.network).map_err(serde_err)?);
        meta.insert("schedule".into(), serde_json::to_string(&self.schedule).map_err(serde_err)?);
        // Write atomically so an interrupted save never clobbers the last good
        // checkpoint.
        let path = path.as_ref();
        let tmp = path.with_extension("partial");
        safetensors::serialize_to_file(tensors, Some(meta), &tmp).map_err(serde_err)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        let (_, header) = safetensors::SafeTensors::read_metadata(&bytes).map_err(serde_err)?;
        let meta = header.metadata().clone().unwrap_or_default();
        let get = |key: &str| {
            meta.get(key).ok_or_else(|| Error::Serde(format!("checkpoint metadata lacks {key:?}")))
        };
        let network: NetworkConfig = serde_json::from_str(get("network")?).map_err(serde_err)?;
        let schedule: NoiseSchedule = serde_json::from_str(get("schedule")?).map_err(serde_err)?;
        let metadata = meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("user.").map(|k| (k.to_string(), v.clone())))
            .collect();
        let mut params = BTreeMap::new();
        let mut ema = BTreeMap::new();
        let mut aux = BTreeMap::new();
        for (name, t) in candle_core::safetensors::load_buffer(&bytes, device)? {
            if let Some(k) = name.strip_prefix(PARAM_PREFIX) {
                params.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix(EMA_PREFIX) {
                ema.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix(AUX_PREFIX) {
                aux.insert(k.to_string(), t);
            } else {
                return Err(Error::Serde(format!("unexpected tensor {name:?} in checkpoint")));
            }
        }
        Ok(Self {
            network,
            schedule,
            params,
            ema: if ema.is_empty() { None } else { Some(ema) },
            aux,
            metadata,
        })
    }
}
