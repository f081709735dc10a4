//! TOML config files layered onto built-in defaults.
//!
//! A file is a flat or nested key/value tree with an optional `schema` key
//! naming its version. Values are merged onto the defaults serialized as
//! JSON, then `--set key.path=value` overrides, then the global `--seed`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use proglab_core::{Error, Result};

pub const SIM_SCHEMA: &str = "proglab-sim/1";
pub const TRAIN_SCHEMA: &str = "proglab-train/1";

fn config_err(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config { field: field.into(), reason: reason.into() }
}

/// Parse a TOML file and check its `schema` key, if present.
pub fn read_toml(path: &Path, schema: &str) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| config_err(path.display().to_string(), e.message().to_string()))?;
    let mut v = serde_json::to_value(table).expect("toml values map to json");
    if let Value::Object(m) = &mut v {
        if let Some(found) = m.remove("schema") {
            if found.as_str() != Some(schema) {
                return Err(config_err(
                    format!("{}: schema", path.display()),
                    format!("expected \"{schema}\", found {found}"),
                ));
            }
        }
    }
    Ok(v)
}

/// Deep merge: objects merge key by key, anything else replaces.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Turn `a.b.c=value` into a nested object. The value is parsed as a TOML
/// scalar or array, falling back to a bare string.
pub fn parse_set(item: &str) -> Result<Value> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| config_err(format!("--set {item}"), "expected key=value"))?;
    let parsed: Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("key present")).expect("toml maps to json"),
        Err(_) => Value::String(raw.to_string()),
    };
    let mut v = parsed;
    for part in key.trim().rsplit('.') {
        if part.is_empty() {
            return Err(config_err(format!("--set {item}"), "empty key segment"));
        }
        let mut m = Map::new();
        m.insert(part.to_string(), v);
        v = Value::Object(m);
    }
    Ok(v)
}

/// Deserialize the merged tree, naming `source` in errors.
pub fn typed<T: DeserializeOwned>(v: Value, source: &str) -> Result<T> {
    serde_json::from_value(v).map_err(|e| config_err(source, e.to_string()))
}

pub fn to_value<T: Serialize>(t: &T) -> Value {
    serde_json::to_value(t).expect("config serializes")
}

/// SHA-256 of the canonical JSON form.
pub fn hash(v: &Value) -> String {
    proglab_core::textio::sha256_hex(serde_json::to_string(v).expect("json").as_bytes())
}
