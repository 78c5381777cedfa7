//! Flat `key = value` configuration files. Keys are the field names of the
//! target struct; `#` starts a comment. Later assignments win, so command-line
//! overrides can simply be appended.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        pairs.push((k.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text)
}

fn convert(key: &str, current: &Value, raw: &str) -> Result<Value> {
    let bad = || Error::Config(format!("`{key}`: cannot use `{raw}` here"));
    match current {
        Value::String(_) => Ok(Value::String(raw.to_string())),
        Value::Bool(_) => raw.parse::<bool>().map(Value::Bool).map_err(|_| bad()),
        Value::Number(_) => {
            if let Ok(i) = raw.parse::<u64>() {
                Ok(Value::from(i))
            } else if let Ok(i) = raw.parse::<i64>() {
                Ok(Value::from(i))
            } else {
                let f = raw.parse::<f64>().map_err(|_| bad())?;
                serde_json::Number::from_f64(f).map(Value::Number).ok_or_else(bad)
            }
        }
        _ => serde_json::from_str(raw).map_err(|_| bad()),
    }
}

/// Returns `base` with the given fields replaced. Unknown keys and values of
/// the wrong type are rejected. Keys not belonging to this struct are skipped
/// when `ignore` contains them.
pub fn apply_pairs<T: Serialize + DeserializeOwned>(base: &T, pairs: &[(String, String)], ignore: &[&str]) -> Result<T> {
    let mut obj = match serde_json::to_value(base).expect("config serializes") {
        Value::Object(m) => m,
        _ => return Err(Error::Config("config target is not a struct".into())),
    };
    for (k, raw) in pairs {
        if ignore.contains(&k.as_str()) {
            continue;
        }
        let current = obj
            .get(k)
            .ok_or_else(|| Error::Config(format!("unknown key `{k}`")))?;
        let v = convert(k, current, raw)?;
        obj.insert(k.clone(), v);
    }
    serde_json::from_value(Value::Object(obj)).map_err(|e| Error::Config(e.to_string()))
}

/// Field names of a config struct, for splitting one file between targets.
pub fn keys<T: Serialize>(value: &T) -> Vec<String> {
    match serde_json::to_value(value) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}
