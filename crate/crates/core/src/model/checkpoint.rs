use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError, ModelParams};
use crate::autodiff::Tensor;
use crate::text::Vocab;
use crate::Scalar;

const FORMAT: &str = "relweave-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    max_seq_len: usize,
    vocab: Vec<String>,
    tensors: Vec<NamedTensor>,
}

impl<T: Scalar> Model<T> {
    /// JSON with shortest round-trip float formatting; values are stored
    /// as f64, which holds f32 exactly.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let file = CheckpointFile {
            format: FORMAT.into(),
            version: VERSION,
            config: self.params.config().clone(),
            max_seq_len: self.max_seq_len,
            vocab: self.vocab.tokens().to_vec(),
            tensors: self
                .params
                .names()
                .iter()
                .zip(self.params.tensors())
                .map(|(name, t)| NamedTensor {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    data: t.data().iter().map(|v| v.to_f64_lossy()).collect(),
                })
                .collect(),
        };
        let text = serde_json::to_string(&file).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported {} v{}", file.format, file.version)));
        }
        let named = file
            .tensors
            .into_iter()
            .map(|t| {
                let data = t.data.into_iter().map(T::from_f64_lossy).collect();
                Ok((t.name, Tensor::new(t.shape, data)?))
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let params = ModelParams::from_named(file.config, named)?;
        let vocab = Vocab::from_token_list(file.vocab)?;
        Model::new(params, vocab, file.max_seq_len)
    }
}
