//! Per-run provenance record written next to every command's outputs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub code_version: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputDigest>,
    /// Artifact files, relative to the manifest's directory.
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], config: &RunConfig) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("model.init_seed".to_string(), config.model.init_seed);
        seeds.insert("train.seed".to_string(), config.train.seed);
        seeds.insert("synth.seed".to_string(), config.synth.seed);
        seeds.insert("eval.seed".to_string(), config.eval.seed);
        Self {
            command: command.to_string(),
            argv: argv.to_vec(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn add_output(&mut self, name: impl Into<PathBuf>) {
        self.outputs.push(name.into());
    }

    /// Inputs whose current contents no longer match the recorded digest.
    pub fn stale_inputs(&self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for i in &self.inputs {
            if sha256_file(&i.path)? != i.sha256 {
                out.push(i.path.clone());
            }
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = reader.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn round_trip_and_staleness() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, "one").unwrap();
        let mut m = RunManifest::new("train", &["sine".into(), "train".into()], &RunConfig::default());
        m.add_input(&input).unwrap();
        m.add_output("checkpoint.json");
        let path = dir.path().join("manifest.json");
        m.write(&path).unwrap();
        let back = RunManifest::read(&path).unwrap();
        assert_eq!(back, m);
        assert!(back.stale_inputs().unwrap().is_empty());
        std::fs::write(&input, "two").unwrap();
        assert_eq!(back.stale_inputs().unwrap(), vec![input]);
    }
}
