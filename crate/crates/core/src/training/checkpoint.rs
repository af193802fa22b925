//! Single-file checkpoints: every parameter as an f32 array keyed by
//! `generator.<path>` or `discriminator.<path>`, plus the run config as JSON
//! in the archive metadata.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const GENERATOR_PREFIX: &str = "generator.";
pub const DISCRIMINATOR_PREFIX: &str = "discriminator.";
const META_KEY: &str = "layout_da";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub image_dims: (usize, usize),
    /// Epochs completed when the checkpoint was written.
    pub epochs_done: usize,
}

pub fn save_checkpoint(path: &Path, generator: &ParamStore, discriminator: &ParamStore, meta: &CheckpointMeta) -> Result<()> {
    let mut arrays: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    for (prefix, store) in [(GENERATOR_PREFIX, generator), (DISCRIMINATOR_PREFIX, discriminator)] {
        for (name, var) in store.vars() {
            let t = var.as_tensor().to_dtype(DType::F32)?;
            let bytes: Vec<u8> = t.flatten_all()?.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect();
            arrays.push((format!("{prefix}{name}"), t.dims().to_vec(), bytes));
        }
    }
    let views = arrays
        .iter()
        .map(|(n, shape, bytes)| Ok((n.clone(), TensorView::new(Dtype::F32, shape.clone(), bytes)?)))
        .collect::<Result<Vec<_>>>()?;
    let metadata = HashMap::from([(META_KEY.to_string(), serde_json::to_string(meta)?)]);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    safetensors::serialize_to_file(views, Some(metadata), path)?;
    Ok(())
}

/// Parameter arrays of a checkpoint, still keyed with their prefixes.
#[derive(Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: HashMap<String, Tensor>,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let buffer = std::fs::read(path)?;
        let (_, header) = SafeTensors::read_metadata(&buffer)?;
        let meta_json = header
            .metadata()
            .as_ref()
            .and_then(|m| m.get(META_KEY))
            .ok_or_else(|| Error::InvalidInput(format!("{} has no run metadata", path.display())))?;
        let meta: CheckpointMeta = serde_json::from_str(meta_json)?;
        let st = SafeTensors::deserialize(&buffer)?;
        let mut tensors = HashMap::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(Error::InvalidInput(format!("tensor {name} is {:?}, expected F32", view.dtype())));
            }
            let values: Vec<f32> = view
                .data()
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.insert(name, Tensor::from_vec(values, view.shape(), &Device::Cpu)?);
        }
        Ok(Self { meta, tensors })
    }

    /// Copies every `prefix` array into the matching parameter of `store`.
    /// The sets of names must agree exactly.
    pub fn restore(&self, prefix: &str, store: &ParamStore) -> Result<()> {
        let mut expected = 0;
        for (name, _) in store.vars() {
            let key = format!("{prefix}{name}");
            let t = self
                .tensors
                .get(&key)
                .ok_or_else(|| Error::InvalidInput(format!("checkpoint lacks {key}")))?;
            store.assign(&name, t)?;
            expected += 1;
        }
        let present = self.tensors.keys().filter(|k| k.starts_with(prefix)).count();
        if present != expected {
            return Err(Error::InvalidInput(format!(
                "checkpoint has {present} {prefix}* arrays, model has {expected}"
            )));
        }
        Ok(())
    }
}
