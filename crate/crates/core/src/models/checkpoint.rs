use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelSpec, SilenceModel};
use crate::archive;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const CHECKPOINT_VERSION: &str = "silence-denoise/1";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    version: String,
    phase: String,
    seed: u64,
    spec: ModelSpec,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Model weights with architecture, phase tag and optional resume state.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub model: SilenceModel,
    pub phase: String,
    /// Free-form metadata such as optimizer settings or training progress.
    pub extra: serde_json::Value,
    /// Additional arrays, e.g. optimizer moments, stored beside the weights.
    pub extra_arrays: Vec<(String, Tensor)>,
}

const PARAM_PREFIX: &str = "param/";
const EXTRA_PREFIX: &str = "extra/";

impl ModelCheckpoint {
    pub fn new(model: SilenceModel, phase: impl Into<String>) -> Self {
        Self { model, phase: phase.into(), extra: serde_json::Value::Null, extra_arrays: Vec::new() }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Meta {
            version: CHECKPOINT_VERSION.to_string(),
            phase: self.phase.clone(),
            seed: self.model.seed,
            spec: self.model.spec.clone(),
            extra: self.extra.clone(),
        };
        let store = &self.model.store;
        let mut arrays: Vec<(String, &Tensor)> = store
            .ids()
            .map(|id| (format!("{PARAM_PREFIX}{}", store.name(id)), store.get(id)))
            .collect();
        arrays.extend(self.extra_arrays.iter().map(|(n, t)| (format!("{EXTRA_PREFIX}{n}"), t)));
        archive::encode(&serde_json::to_value(meta)?, &arrays)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, arrays) = archive::decode(bytes)?;
        let meta: Meta = serde_json::from_value(meta)
            .map_err(|e| Error::Checkpoint(format!("unreadable checkpoint metadata: {e}")))?;
        if meta.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                meta.version
            )));
        }
        let mut model = SilenceModel::new(meta.spec, meta.seed);
        let mut seen = 0;
        let mut extra_arrays = Vec::new();
        for (name, t) in arrays {
            if let Some(p) = name.strip_prefix(PARAM_PREFIX) {
                let id = model
                    .store
                    .find(p)
                    .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {p}")))?;
                if model.store.get(id).shape() != t.shape() {
                    return Err(Error::Checkpoint(format!(
                        "parameter {p} has shape {:?}, architecture expects {:?}",
                        t.shape(),
                        model.store.get(id).shape()
                    )));
                }
                *model.store.get_mut(id) = t;
                seen += 1;
            } else if let Some(e) = name.strip_prefix(EXTRA_PREFIX) {
                extra_arrays.push((e.to_string(), t));
            }
        }
        if seen != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {seen} of {} parameters",
                model.store.len()
            )));
        }
        Ok(Self { model, phase: meta.phase, extra: meta.extra, extra_arrays })
    }

    /// Atomic write (temp file, then rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        archive::write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
