//! JSON checkpoints: model configuration, vocabulary and every parameter
//! tensor by name.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::kevili::{Kevili, KeviliConfig};
use crate::levilm::{Levilm, LevilmConfig};
use crate::tokenizer::Vocab;

pub const FORMAT: &str = "skvg-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Kevili(KeviliConfig),
    Levilm(LevilmConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub vocab: Vocab,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(model: ModelConfig, vocab: &Vocab, store: &ParamStore) -> Self {
        let tensors = store
            .iter()
            .map(|(_, p)| Tensor {
                name: p.name.clone(),
                shape: [p.value.nrows(), p.value.ncols()],
                data: p.value.iter().copied().collect(),
            })
            .collect();
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            model,
            vocab: vocab.clone(),
            tensors,
        }
    }

    pub fn of_levilm(m: &Levilm) -> Self {
        Self::new(ModelConfig::Levilm(m.config.clone()), &m.vocab, &m.store)
    }

    pub fn of_kevili(m: &Kevili) -> Self {
        Self::new(ModelConfig::Kevili(m.config.clone()), &m.vocab, &m.store)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != FORMAT || c.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                c.format, c.version
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn arrays(&self) -> Result<HashMap<String, Array2<f64>>> {
        let mut out = HashMap::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let a = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone()).map_err(|_| {
                Error::Checkpoint(format!(
                    "tensor {} holds {} values for shape {:?}",
                    t.name,
                    t.data.len(),
                    t.shape
                ))
            })?;
            if out.insert(t.name.clone(), a).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {}", t.name)));
            }
        }
        Ok(out)
    }

    /// Copies every tensor into `store`, which must have exactly the same
    /// names and shapes.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        let tensors = self.arrays()?;
        if tensors.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors for {} parameters",
                tensors.len(),
                store.len()
            )));
        }
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let name = &store.get(id).name;
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.dim() != store.value(id).dim() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.dim(),
                    store.value(id).dim()
                )));
            }
            store.value_mut(id).assign(t);
        }
        Ok(())
    }

    pub fn into_levilm(self) -> Result<Levilm> {
        let ModelConfig::Levilm(config) = self.model.clone() else {
            return Err(Error::Checkpoint("checkpoint holds a KeViLI model".into()));
        };
        let mut m = Levilm::new(config, self.vocab.clone(), 0)?;
        self.restore(&mut m.store)?;
        Ok(m)
    }

    pub fn into_kevili(self) -> Result<Kevili> {
        let ModelConfig::Kevili(config) = self.model.clone() else {
            return Err(Error::Checkpoint("checkpoint holds a LeViLM model".into()));
        };
        let mut m = Kevili::new(config, self.vocab.clone(), 0)?;
        self.restore(&mut m.store)?;
        Ok(m)
    }
}
