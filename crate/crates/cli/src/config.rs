use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::CliError;

/// Parses a TOML or JSON file (chosen by extension) into a generic tree.
pub fn read_tree(path: &Path) -> Result<Value, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let tree = if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    } else {
        let t: toml::Table = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(|e| CliError::Config(e.to_string()))?
    };
    match tree {
        Value::Object(_) => Ok(tree),
        _ => Err(CliError::Config(format!(
            "{}: top level must be a table",
            path.display()
        ))),
    }
}

/// Loads a config from an optional file over `T::default()`.
///
/// Also reports whether the file sets a top-level `seed`.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<(T, bool), CliError> {
    let Some(path) = path else {
        return Ok((T::default(), false));
    };
    let tree = read_tree(path)?;
    let has_seed = tree.get("seed").is_some();
    let value = serde_json::from_value(tree).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((value, has_seed))
}

/// Seed from the flag, else from the file; simulation commands need one of them.
pub fn require_seed(flag: Option<u64>, file_has_seed: bool, file_seed: u64) -> Result<u64, CliError> {
    match (flag, file_has_seed) {
        (Some(s), _) => Ok(s),
        (None, true) => Ok(file_seed),
        (None, false) => Err(CliError::Config(
            "a seed is required: set `seed` in the config file or pass --seed".into(),
        )),
    }
}
