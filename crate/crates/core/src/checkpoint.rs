//! Self-describing model file: configuration, vocabularies and every
//! tensor with its shape, as JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbedderConfig;
use crate::features::{FeatureConfig, FeatureVocab};
use crate::label::RelationLabel;
use crate::model::{ModelError, TreeLstmParams, TENSOR_NAMES};
use crate::train::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint tensors: {0}")]
    Tensors(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub labels: Vec<RelationLabel>,
    pub features: FeatureConfig,
    pub vocab: FeatureVocab,
    pub embedder: EmbedderConfig,
    pub train: TrainConfig,
    pub selected_epoch: usize,
    pub input_size: usize,
    pub hidden_size: usize,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(
        params: &TreeLstmParams,
        vocab: FeatureVocab,
        embedder: EmbedderConfig,
        train: TrainConfig,
        selected_epoch: usize,
    ) -> Checkpoint {
        let shapes = TreeLstmParams::shapes(params.input_size(), params.hidden_size());
        let tensors = params
            .tensors()
            .iter()
            .zip(TENSOR_NAMES)
            .zip(shapes)
            .map(|((data, name), shape)| NamedTensor {
                name: name.to_string(),
                shape,
                data: data.to_vec(),
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            labels: RelationLabel::ALL.to_vec(),
            features: train.features,
            vocab,
            embedder,
            train,
            selected_epoch,
            input_size: params.input_size(),
            hidden_size: params.hidden_size(),
            tensors,
        }
    }

    pub fn params(&self) -> Result<TreeLstmParams, CheckpointError> {
        if self.tensors.len() != TENSOR_NAMES.len() {
            return Err(CheckpointError::Tensors(format!(
                "expected {} tensors, found {}",
                TENSOR_NAMES.len(),
                self.tensors.len()
            )));
        }
        let shapes = TreeLstmParams::shapes(self.input_size, self.hidden_size);
        let mut data = Vec::with_capacity(self.tensors.len());
        for ((t, name), shape) in self.tensors.iter().zip(TENSOR_NAMES).zip(shapes) {
            if t.name != name {
                return Err(CheckpointError::Tensors(format!(
                    "expected tensor {name}, found {}",
                    t.name
                )));
            }
            if t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(CheckpointError::Tensors(format!(
                    "tensor {name} has shape {:?} and {} values, expected shape {shape:?}",
                    t.shape,
                    t.data.len()
                )));
            }
            data.push(t.data.clone());
        }
        Ok(TreeLstmParams::from_tensors(self.input_size, self.hidden_size, data)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(raw: &str) -> Result<Checkpoint, CheckpointError> {
        let ck: Checkpoint = serde_json::from_str(raw)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(ck.version));
        }
        if ck.labels != RelationLabel::ALL {
            return Err(CheckpointError::Tensors(format!(
                "label order {:?} differs from the classifier's",
                ck.labels
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let params = TreeLstmParams::init(5, 3, 11);
        Checkpoint::new(
            &params,
            FeatureVocab::new(),
            EmbedderConfig {
                sources: vec![("toy".into(), 5)],
                fill_std: 1e-4,
                seed: 3,
                case_fallback: true,
                unknown_key: "<unk>".into(),
            },
            TrainConfig::default(),
            4,
        )
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let ck = sample();
        let text = ck.to_json();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
        assert_eq!(back.params().unwrap(), TreeLstmParams::init(5, 3, 11));
    }

    #[test]
    fn rejects_bad_tensors_and_versions() {
        let mut ck = sample();
        ck.tensors[2].data.pop();
        assert!(matches!(ck.params(), Err(CheckpointError::Tensors(_))));

        let mut ck = sample();
        ck.version = 99;
        assert!(matches!(
            Checkpoint::from_json(&ck.to_json()),
            Err(CheckpointError::Version(99))
        ));
    }
}
