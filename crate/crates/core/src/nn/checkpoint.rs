//! JSON checkpoints. Values are written with round-trip float formatting,
//! so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, NnError, Result};
use crate::autodiff::Tensor;

pub const CHECKPOINT_FORMAT: &str = "spformer-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Start of this parameter in [`Checkpoint::values`].
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: Vec<ParamRecord>,
    /// Every parameter, frozen ones included, in registration order.
    pub values: Vec<f64>,
    /// Per input dimension `(lo, hi)` used to normalize coordinates.
    pub input_bounds: Option<Vec<(f64, f64)>>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, input_bounds: Option<Vec<(f64, f64)>>) -> Self {
        let mut params = Vec::new();
        let mut values = Vec::new();
        for p in model.store().params() {
            params.push(ParamRecord {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
                offset: values.len(),
            });
            values.extend_from_slice(p.value.data());
        }
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: VERSION,
            config: model.config().clone(),
            params,
            values,
            input_bounds,
        }
    }

    /// Rebuilds the model and overwrites every parameter with the stored values.
    pub fn to_model(&self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT || self.version != VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported format `{}` version {}",
                self.format, self.version
            )));
        }
        let mut model = Model::new(self.config.clone())?;
        let store = model.store_mut();
        if store.params().len() != self.params.len() {
            return Err(NnError::Checkpoint(format!(
                "expected {} parameters, found {}",
                store.params().len(),
                self.params.len()
            )));
        }
        for (i, record) in self.params.iter().enumerate() {
            let param = store.get_mut(super::ParamId(i));
            if param.name != record.name || param.value.shape() != record.shape.as_slice() {
                return Err(NnError::Checkpoint(format!(
                    "parameter {i}: expected `{}` {:?}, found `{}` {:?}",
                    param.name,
                    param.value.shape(),
                    record.name,
                    record.shape
                )));
            }
            let n = param.value.numel();
            let slice = self
                .values
                .get(record.offset..record.offset + n)
                .ok_or_else(|| NnError::Checkpoint(format!("values for `{}` out of range", record.name)))?;
            param.value = Tensor::new(record.shape.clone(), slice.to_vec())?;
            param.trainable = record.trainable;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| NnError::Checkpoint(e.to_string()))
    }
}
