//! Run configuration: TOML file sections layered over defaults, with
//! command-line overrides on top.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::category::AnalysisConfig;
use crate::data::Schema;
use crate::error::{Error, Result};
use crate::metrics::EvalConfig;
use crate::model::ModelConfig;
use crate::objective::TrainConfig;
use crate::synth::SynthConfig;

/// Ingestion, labelling and filtering settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub schema: Schema,
    /// Watched fraction at or above which a view is positive.
    pub pos_ratio: f64,
    /// Watch time in seconds below which a view is a passive negative.
    pub neg_seconds: f64,
    pub n_core: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            schema: Schema::default(),
            pos_ratio: 0.5,
            neg_seconds: 3.0,
            n_core: 10,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pos_ratio > 0.0 && self.pos_ratio <= 1.0) {
            return Err(Error::config("data.pos_ratio", "must lie in (0, 1]"));
        }
        if !(self.neg_seconds >= 0.0) {
            return Err(Error::config("data.neg_seconds", "must be non-negative"));
        }
        if self.n_core == 0 {
            return Err(Error::config("data.n_core", "must be at least 1"));
        }
        Ok(())
    }
}

/// Every tunable of a run, one section per pipeline stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub eval: EvalConfig,
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate().map_err(|e| prefix_field(e, "model"))?;
        self.train.validate().map_err(|e| prefix_field(e, "train"))?;
        self.synth.validate().map_err(|e| prefix_field(e, "synth"))?;
        if self.eval.ndcg_k == 0 {
            return Err(Error::config("eval.ndcg_k", "must be at least 1"));
        }
        if self.eval.n_negatives == 0 && !self.eval.full_catalog {
            return Err(Error::config("eval.n_negatives", "must be at least 1"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }
}

fn prefix_field(e: Error, section: &str) -> Error {
    match e {
        Error::Config { field, msg } if !field.contains('.') => Error::Config {
            field: format!("{section}.{field}"),
            msg,
        },
        other => other,
    }
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.to_string())),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Sets a dotted key such as `model.dim` inside `table`.
pub fn set_key(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "malformed key"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("{p} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(value));
    Ok(())
}

/// Field path and message from a deserialisation error.
fn describe(e: &toml::de::Error) -> (String, String) {
    let msg = e.message().to_string();
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.contains("unknown field") || msg.contains("missing field"))
        .unwrap_or("config")
        .to_string();
    (field, msg)
}

/// Builds a configuration from an optional file and `key=value` overrides.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    parse_config(&text, overrides)
}

/// Builds a configuration from TOML text and `key=value` overrides.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut table = text.parse::<toml::Table>().map_err(|e| {
        let (field, msg) = describe(&e);
        Error::Config { field, msg }
    })?;
    for (k, v) in overrides {
        set_key(&mut table, k, v)?;
    }
    let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
        let (field, msg) = describe(&e);
        Error::Config { field, msg }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Splits `section.key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::config(s, "override must look like section.key=value")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn defaults_without_file() {
        let cfg = load_config(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.data.n_core, 10);
    }

    #[test]
    fn file_then_overrides() {
        let f = file("[model]\ndim = 16\nn_interests = 4\n[train]\nseed = 9\n");
        let cfg = load_config(
            Some(f.path()),
            &[("model.dim".into(), "24".into()), ("model.kind".into(), "sasrec".into())],
        )
        .unwrap();
        assert_eq!(cfg.model.dim, 24);
        assert_eq!(cfg.model.n_interests, 4);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.model.kind, crate::model::ModelKind::Sasrec);
    }

    #[test]
    fn lambda_violation_names_field() {
        let f = file("[train]\nlambda1 = 0.5\nlambda2 = 0.5\nlambda3 = 0.5\n");
        match load_config(Some(f.path()), &[]) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "train.lambda"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_names_field() {
        let f = file("[model]\nwidth = 3\n");
        match load_config(Some(f.path()), &[]) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "width"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        let f = file(&cfg.to_toml().unwrap());
        assert_eq!(load_config(Some(f.path()), &[]).unwrap(), cfg);
    }

    #[test]
    fn override_parsing() {
        assert_eq!(parse_override("a.b=1").unwrap(), ("a.b".into(), "1".into()));
        assert!(parse_override("nothing").is_err());
    }
}
