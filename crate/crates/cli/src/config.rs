//! Config files: a TOML document with one table per subcommand. Keys in
//! the table replace the corresponding flags, nested tables merge.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, Result};

pub fn load(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Config {
        path: path.into(),
        msg: e.to_string(),
    })
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Overlays the `section` table of `config` onto parsed flags.
pub fn apply<T: Serialize + DeserializeOwned>(args: T, config: &toml::Table, section: &str, path: &Path) -> Result<T> {
    let Some(table) = config.get(section) else {
        return Ok(args);
    };
    let err = |msg: String| CliError::Config {
        path: path.into(),
        msg: format!("[{section}]: {msg}"),
    };
    if !table.is_table() {
        return Err(err("expected a table".into()));
    }
    let mut value = serde_json::to_value(&args).map_err(|e| err(e.to_string()))?;
    let over = serde_json::to_value(table).map_err(|e| err(e.to_string()))?;
    // an absent nested section serializes as null; start it from scratch
    if let (Value::Object(b), Value::Object(o)) = (&mut value, &over) {
        for (k, v) in o {
            if v.is_object() && b.get(k).is_some_and(Value::is_null) {
                b.insert(k.clone(), Value::Object(Default::default()));
            }
        }
    }
    merge(&mut value, over);
    serde_json::from_value(value).map_err(|e| err(e.to_string()))
}
