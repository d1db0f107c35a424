use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Everything needed to replay a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved configuration after merging defaults, `--config` and flags.
    pub config: Value,
    pub artifacts: Vec<PathBuf>,
    pub version: String,
    pub seed: Option<u64>,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, artifacts: Vec<PathBuf>, seed: Option<u64>) -> Result<Self, CliError> {
        Ok(RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config).map_err(|e| CliError::Runtime(e.to_string()))?,
            artifacts,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))? + "\n";
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

/// Manifest path for a command writing a single file `out`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

/// Recursively overlays `patch` on `base`; objects merge key by key, any
/// other value replaces.
pub fn deep_merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                deep_merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// `defaults` overlaid by the JSON file `config`, if any. Flags are
/// applied on the typed result by the caller.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, config: Option<&Path>) -> Result<T, CliError> {
    let mut v = serde_json::to_value(defaults).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(path) = config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let file: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: invalid JSON config: {e}", path.display())))?;
        deep_merge(&mut v, file);
    }
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}
