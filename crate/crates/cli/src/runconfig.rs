//! Run configuration: a JSON file holding the scene and training configs,
//! with dotted-key command-line overrides. Unknown keys are rejected with
//! the list of valid ones; every run writes the fully resolved config plus
//! its hash next to the outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use canonlift::scenes::SceneConfig;
use canonlift::trainer::TrainConfig;

use crate::commands::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn hash(&self) -> String {
        use sha2::Digest;
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = sha2::Sha256::new();
        hasher.update(json.as_bytes());
        canonlift::scenes::hex_string(&hasher.finalize())
    }
}

/// Loads the config file (defaults when absent), applies `key=value`
/// overrides on dotted paths, and deserializes strictly.
pub fn load(config_path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut value: serde_json::Value = match config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Core(canonlift::Error::io(path.display().to_string(), e))
            })?;
            serde_json::from_str(&text).map_err(|e| {
                CliError::Usage(format!("config {} is not valid JSON: {e}", path.display()))
            })?
        }
        None => serde_json::to_value(RunConfig::default()).expect("default serializes"),
    };

    for entry in overrides {
        let (key, raw) = entry.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("override {entry:?} is not of the form key=value"))
        })?;
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        set_path(&mut value, key, parsed)?;
    }

    serde_json::from_value(value)
        .map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}

fn set_path(
    root: &mut serde_json::Value,
    dotted: &str,
    new_value: serde_json::Value,
) -> Result<(), CliError> {
    let mut cursor = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let object = cursor.as_object_mut().ok_or_else(|| {
            CliError::Usage(format!("override path {dotted:?} does not address an object"))
        })?;
        if i + 1 == parts.len() {
            object.insert(part.to_string(), new_value);
            return Ok(());
        }
        cursor = object
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}

/// Writes the resolved config and its hash next to a run's outputs.
pub fn write_resolved(dir: &Path, config: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Core(canonlift::Error::io(dir.display().to_string(), e)))?;
    let payload = serde_json::json!({
        "hash": config.hash(),
        "config": config,
    });
    let path = dir.join("run_config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&payload).expect("serializes"))
        .map_err(|e| CliError::Core(canonlift::Error::io(path.display().to_string(), e)))
}
