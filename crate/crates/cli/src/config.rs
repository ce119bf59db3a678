//! Config files and the flag-over-file overlay.
//!
//! A config file is TOML with one table per command (`[gen]`, `[train]`,
//! ...) whose keys are the flag names with underscores. A `manifest.json`
//! written by an earlier run is accepted as well; its `config` object is used
//! for the command it records.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::Invalid;

/// The table for `command` in the config file, if any.
pub fn load_section(path: &Path, command: &str) -> Result<Option<Value>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let v: Value = serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
        if v.get("command").and_then(Value::as_str) != Some(command) {
            return Ok(None);
        }
        return Ok(v.get("config").cloned());
    }
    let t: toml::Table = toml::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
    match t.get(command) {
        None => Ok(None),
        Some(section) => Ok(Some(serde_json::to_value(section)?)),
    }
}

/// Overlays the flags that were given (non-null, non-false) on the file's
/// values.
pub fn overlay<T: Serialize + DeserializeOwned>(flags: &T, file: Option<Value>) -> Result<T> {
    let mut merged = match file {
        None => Map::new(),
        Some(Value::Object(m)) => m,
        Some(other) => return Err(Invalid(format!("config section must be a table, got {other}")).into()),
    };
    let Value::Object(given) = serde_json::to_value(flags)? else {
        unreachable!("argument structs serialize to objects");
    };
    for (k, v) in given {
        if !matches!(v, Value::Null | Value::Bool(false)) {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Invalid(format!("config: {e}")).into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct A {
        epochs: Option<usize>,
        seed: Option<u64>,
        multipath: bool,
    }

    #[test]
    fn flags_win_and_file_fills_gaps() {
        let file = serde_json::json!({"epochs": 5, "seed": 3, "multipath": true});
        let flags = A { epochs: Some(7), seed: None, multipath: false };
        assert_eq!(overlay(&flags, Some(file)).unwrap(), A { epochs: Some(7), seed: Some(3), multipath: true });
        assert_eq!(overlay(&A::default(), None).unwrap(), A::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let file = serde_json::json!({"epoch": 5});
        let err = overlay(&A::default(), Some(file)).unwrap_err();
        assert!(err.downcast_ref::<Invalid>().is_some());
    }

    #[test]
    fn toml_sections_and_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[train]\nepochs = 2\n[gen]\nseed = 1\n").unwrap();
        assert_eq!(load_section(&p, "train").unwrap(), Some(serde_json::json!({"epochs": 2})));
        assert_eq!(load_section(&p, "eval").unwrap(), None);
        let m = dir.path().join("manifest.json");
        std::fs::write(&m, r#"{"command": "gen", "config": {"seed": 9}}"#).unwrap();
        assert_eq!(load_section(&m, "gen").unwrap(), Some(serde_json::json!({"seed": 9})));
        assert_eq!(load_section(&m, "train").unwrap(), None);
    }
}
