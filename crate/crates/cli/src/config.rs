//! Flag/config-file merging.
//!
//! Every subcommand's options are a struct of `Option`s that is both a clap
//! `Args` and a serde type. A config file supplies a table per subcommand
//! (`[detect]`, `[evaluate]`, `[gen_dataset]`, `[serve]`, `[preprocess]`,
//! `[render]`); flags given on the command line override file values, and
//! anything still unset falls back to the built-in default.

use std::path::Path;

use serde::Serialize;
use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::CliError;

pub fn load_file(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config file {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::usage(format!("invalid config file {}: {}", path.display(), e.message())))
}

/// Overlays `flags` on the `section` table of `file`.
pub fn merge<T: Serialize + DeserializeOwned>(flags: T, file: Option<&toml::Table>, section: &str) -> Result<T, CliError> {
    let Some(table) = file.and_then(|f| f.get(section)) else { return Ok(flags) };
    let mut base = serde_json::to_value(table).map_err(|e| CliError::usage(e.to_string()))?;
    let over = serde_json::to_value(&flags).map_err(|e| CliError::usage(e.to_string()))?;
    if let (Value::Object(base), Value::Object(over)) = (&mut base, over) {
        for (k, v) in over {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(base).map_err(|e| CliError::usage(format!("config section [{section}]: {e}")))
}
