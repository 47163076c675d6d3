use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{KernelError, Result, Tensor};

/// Named tensor collection, serialized as
/// `{"tensors": {name: {"shape": [...], "data": [...]}}}`.
///
/// Floats are written in shortest round-trip form, so a save/load cycle
/// reproduces every value bit for bit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, TensorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: &Tensor) {
        self.tensors.insert(
            name.into(),
            TensorRecord {
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            },
        );
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        let rec = self
            .tensors
            .get(name)
            .ok_or_else(|| KernelError::Checkpoint(format!("missing tensor `{name}`")))?;
        Tensor::new(rec.shape.clone(), rec.data.clone())
            .map_err(|e| KernelError::Checkpoint(format!("tensor `{name}`: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
