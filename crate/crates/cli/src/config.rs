use std::path::{Path, PathBuf};

use mfnet_core::model::ModelConfig;
use mfnet_core::pipeline::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Run configuration file. Every field is optional; unknown keys fail.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// JSON list of mixing specs. Relative to the config file.
    pub manifest: Option<PathBuf>,
    /// Where checkpoints and the loss curve go. Relative to the config file.
    pub out_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl CliConfig {
    /// Reads `path`, applies `key.path=value` overrides, validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: CliConfig =
            serde_json::from_value(value).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.manifest, &mut cfg.out_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.model.validate().map_err(|e| e.to_string())?;
        cfg.train.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

/// Sets `a.b.c=v` inside `root`. `v` is parsed as JSON when it parses,
/// otherwise taken as a string.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override '{spec}' is not key=value"))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override key '{key}' has an empty segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| format!("override '{key}': '{part}' is not inside an object"))?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| format!("override '{key}' does not address an object field"))?
        .insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}
