use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::ModelConfig;
use super::params::ModelParams;

const FORMAT: &str = "sine-checkpoint";
const VERSION: u32 = 1;

/// Model configuration, vocabulary and every parameter tensor.
///
/// Stored as JSON; floats use shortest round-trip formatting so reloading
/// is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub item_ids: Vec<String>,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, item_ids: Vec<String>, params: ModelParams) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            config,
            item_ids,
            params,
        }
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let json = serde_json::to_string(ckpt).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&raw).map_err(|e| Error::Format(e.to_string()))?;
    if ckpt.format != FORMAT || ckpt.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint {} v{}",
            ckpt.format, ckpt.version
        )));
    }
    ckpt.config.validate()?;
    ckpt.params.check(&ckpt.config)?;
    if ckpt.item_ids.len() != ckpt.params.n_items() {
        return Err(Error::Format("vocabulary size does not match embeddings".into()));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig {
            dim: 6,
            max_len: 4,
            n_interests: 2,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 5).unwrap();
        let ids = (0..5).map(|i| format!("i{i}")).collect();
        let ckpt = Checkpoint::new(cfg, ids, params);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        write_checkpoint(&ckpt, &path).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), ckpt);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let cfg = ModelConfig {
            dim: 2,
            max_len: 1,
            n_interests: 1,
            ..ModelConfig::default()
        };
        let mut ckpt = Checkpoint::new(cfg.clone(), vec!["a".into()], ModelParams::init(&cfg, 1).unwrap());
        ckpt.version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        write_checkpoint(&ckpt, &path).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format(_))));
    }
}
