use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Model, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

/// Serialized model: configuration, vocabulary fingerprint and every
/// parameter (including batch-norm running statistics) by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub fingerprint: String,
    tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, fingerprint: &str) -> Self {
        Checkpoint {
            config: model.config().clone(),
            fingerprint: fingerprint.to_string(),
            tensors: model
                .params
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    shape: p.value.shape(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds the model; every parameter must be present with its shape.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.clone(), 0)?;
        if self.tensors.len() != model.params.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} tensors, the model needs {}",
                self.tensors.len(),
                model.params.len()
            )));
        }
        for t in &self.tensors {
            let id = model
                .params
                .find(&t.name)
                .ok_or_else(|| Error::Data(format!("checkpoint tensor `{}` is not a model parameter", t.name)))?;
            let value = Tensor::from_vec(t.shape[0], t.shape[1], t.data.clone())?;
            model.params.set_value(id, value)?;
        }
        Ok(model)
    }

    /// Fails unless the checkpoint was trained on the vocabulary with this
    /// fingerprint.
    pub fn check_fingerprint(&self, fingerprint: &str) -> Result<()> {
        if self.fingerprint != fingerprint {
            return Err(Error::Data(format!(
                "checkpoint vocabulary {} does not match {}",
                self.fingerprint, fingerprint
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, fingerprint: &str) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(&Checkpoint::from_model(model, fingerprint))
        .map_err(|e| Error::Data(format!("cannot serialize checkpoint: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: malformed checkpoint: {e}", path.display())))
}
