//! JSON checkpoints: config, row-major `f64` tensors and free-form metadata.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::cnp::{CnpConfig, CnpModel};

pub const CHECKPOINT_FORMAT: &str = "arcnp-cnp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: CnpConfig,
    pub tensors: Vec<TensorRecord>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn from_model(model: &CnpModel, metadata: BTreeMap<String, serde_json::Value>) -> Self {
        let params = model.params();
        let tensors = model
            .tensors()
            .into_iter()
            .map(|(name, shape, offset)| {
                let len: usize = shape.iter().product();
                TensorRecord {
                    name,
                    shape,
                    data: params[offset..offset + len].to_vec(),
                }
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            tensors,
            metadata,
        }
    }

    pub fn into_model(self) -> Result<CnpModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidArgument(format!("unknown checkpoint format {:?}", self.format)));
        }
        if self.version > CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "checkpoint version {} is newer than supported {CHECKPOINT_VERSION}",
                self.version
            )));
        }
        let template = CnpModel::from_params(self.config.clone(), vec![0.0; expected_len(&self.config)?])?;
        let mut params = vec![0.0; template.num_params()];
        let by_name: BTreeMap<&str, &TensorRecord> = self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        for (name, shape, offset) in template.tensors() {
            let t = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint is missing tensor {name}")))?;
            if t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::InvalidArgument(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape)));
            }
            params[offset..offset + t.data.len()].copy_from_slice(&t.data);
        }
        CnpModel::from_params(self.config, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn expected_len(config: &CnpConfig) -> Result<usize> {
    let mut probe = crate::rng::RngStream::new(0);
    Ok(CnpModel::new(config.clone(), &mut probe)?.num_params())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::inputs;
    use crate::neural::cnp::EmptyEncoding;
    use crate::rng::RngStream;

    #[test]
    fn roundtrip_preserves_predictions() {
        let mut cfg = CnpConfig::uniform_width(8);
        cfg.empty_encoding = EmptyEncoding::Learned;
        let model = CnpModel::new(cfg, &mut RngStream::new(3)).unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("epochs".into(), serde_json::json!(3));
        let dir = tempdir();
        let path = dir.join("model.json");
        Checkpoint::from_model(&model, meta.clone()).save(&path).unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.metadata, meta);
        let back = ck.into_model().unwrap();
        assert_eq!(back, model);
        let t = inputs(&[0.1]);
        assert_eq!(back.predict(&[], &t).unwrap(), model.predict(&[], &t).unwrap());
    }

    #[test]
    fn weights_are_row_major() {
        let model = CnpModel::new(CnpConfig::uniform_width(8), &mut RngStream::new(1)).unwrap();
        let ck = Checkpoint::from_model(&model, BTreeMap::new());
        let first = &ck.tensors[0];
        assert_eq!(first.name, "encoder.layer0.weight");
        assert_eq!(first.shape, vec![8, 2]);
    }

    #[test]
    fn rejects_unknown_format() {
        let model = CnpModel::new(CnpConfig::uniform_width(8), &mut RngStream::new(1)).unwrap();
        let mut ck = Checkpoint::from_model(&model, BTreeMap::new());
        ck.format = "something-else".into();
        assert!(ck.clone().into_model().is_err());
        ck.format = CHECKPOINT_FORMAT.into();
        ck.version = 99;
        assert!(ck.into_model().is_err());
    }

    fn tempdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("arcnp-ck-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
