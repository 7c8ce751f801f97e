//! Run configuration: a JSON file merged with `--set key=value` overrides,
//! plus the manifest written into every output directory.

use std::path::Path;

use fsos_core::eval::{EvalConfig, SplitConfig};
use fsos_core::io::{read_json, write_json};
use fsos_core::meta::{ReprConfig, TrainConfig};
use fsos_core::net::EncoderConfig;
use fsos_core::signal::DatasetConfig;
use fsos_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<DatasetConfig>,
    pub encoder: EncoderConfig,
    pub repr: ReprConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub split: Option<SplitConfig>,
    /// Master seed; overrides `train.seed` and `eval.seed` when set.
    pub seed: Option<u64>,
}

impl RunConfig {
    /// Load `path` (or start empty), apply dotted overrides, then resolve
    /// the master seed: `--seed` beats the file, the file beats `FSOS_SEED`.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut value = match path {
            Some(p) => read_json::<Value>(p)?,
            None => Value::Object(Map::new()),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| Error::InvalidConfig(format!("configuration: {e}")))?;
        if let Some(s) = seed.or(cfg.seed).or_else(fsos_core::rng::env_seed) {
            cfg.seed = Some(s);
            cfg.train.seed = s;
            cfg.eval.seed = s;
        }
        Ok(cfg)
    }

    pub fn master_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

/// Apply one `a.b.c=value` override. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{spec}` is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidConfig(format!("bad override key `{key}`")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            *node = Value::Object(Map::new());
        }
        let obj = node.as_object_mut().unwrap();
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
    }
    if !node.is_object() {
        return Err(Error::InvalidConfig(format!(
            "override `{key}` descends into a non-object"
        )));
    }
    node.as_object_mut()
        .unwrap()
        .insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to reproduce an output directory. Deliberately free
/// of timestamps and host details.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub inputs: Value,
    pub config: &'a RunConfig,
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, inputs: Value, config: &'a RunConfig) -> Self {
        Self {
            tool: "fsos",
            version: env!("CARGO_PKG_VERSION"),
            command,
            inputs,
            config,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.display().to_string(),
                source: e,
            })?;
        }
        write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_create_nested_keys_and_parse_json() {
        let mut v = json!({"train": {"epochs": 3}});
        apply_override(&mut v, "train.lr=0.01").unwrap();
        apply_override(&mut v, "encoder.fusion=SumAfterProject").unwrap();
        apply_override(&mut v, "eval.score=\"neg_max_known\"").unwrap();
        assert_eq!(v["train"]["epochs"], 3);
        assert_eq!(v["train"]["lr"], 0.01);
        assert_eq!(v["encoder"]["fusion"], "SumAfterProject");
        assert_eq!(v["eval"]["score"], "neg_max_known");
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "train.epochs.x=1").is_err());
        assert!(apply_override(&mut v, "a..b=1").is_err());
    }

    #[test]
    fn flag_seed_overrides_component_seeds() {
        let cfg = RunConfig::load(None, &["train.seed=4".into()], Some(9)).unwrap();
        assert_eq!((cfg.train.seed, cfg.eval.seed, cfg.seed), (9, 9, Some(9)));
        let kept = RunConfig::load(None, &["seed=2".into()], None).unwrap();
        assert_eq!(kept.train.seed, 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::load(None, &["train.epoch=3".into()], None).is_err());
        assert!(RunConfig::load(None, &["bogus=1".into()], None).is_err());
    }
}
