//! Layered run configuration: flag > config file > environment > default.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const ENV_PREFIX: &str = "PSVC_";

/// Environment keys and the config field each one fills.
const ENV_KEYS: [(&str, &str); 3] = [("SEED", "seed"), ("THREADS", "threads"), ("LAMBDA", "lambda")];

/// A problem with how the tool was invoked. Exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parsed `--config` file: a JSON object with optional top-level `threads`
/// and one optional section per subcommand.
#[derive(Debug, Default)]
pub struct FileConfig {
    pub threads: Option<usize>,
    sections: Map<String, Value>,
}

const SECTIONS: [&str; 4] = ["simulate", "filter", "attack", "sweep"];

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| usage(format!("config file {} is not valid JSON: {e}", path.display())))?;
        let Value::Object(mut map) = value else {
            return Err(usage(format!("config file {} must hold a JSON object", path.display())));
        };
        let threads = match map.remove("threads") {
            None => None,
            Some(v) => Some(
                serde_json::from_value(v)
                    .map_err(|e| usage(format!("config key `threads`: {e}")))?,
            ),
        };
        if let Some(k) = map.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(usage(format!(
                "unknown config key `{k}` (expected threads, {})",
                SECTIONS.join(", ")
            )));
        }
        Ok(Self {
            threads,
            sections: map,
        })
    }

    fn section(&self, name: &str) -> anyhow::Result<Map<String, Value>> {
        match self.sections.get(name) {
            None => Ok(Map::new()),
            Some(Value::Object(m)) => Ok(m.clone()),
            Some(_) => Err(usage(format!("config section `{name}` must be a JSON object"))),
        }
    }
}

/// `PSVC_*` variables, rejecting unknown names under the prefix.
#[derive(Debug, Default)]
pub struct EnvConfig {
    values: Map<String, Value>,
}

impl EnvConfig {
    pub fn from_env() -> anyhow::Result<Self> {
        Self::from_vars(std::env::vars())
    }

    pub fn from_vars(vars: impl IntoIterator<Item = (String, String)>) -> anyhow::Result<Self> {
        let mut values = Map::new();
        for (name, raw) in vars {
            let Some(suffix) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let Some((_, field)) = ENV_KEYS.iter().find(|(k, _)| *k == suffix) else {
                let known: Vec<String> = ENV_KEYS.iter().map(|(k, _)| format!("{ENV_PREFIX}{k}")).collect();
                return Err(usage(format!(
                    "unknown environment variable {name} (known: {})",
                    known.join(", ")
                )));
            };
            let value: Value = serde_json::from_str(raw.trim())
                .map_err(|_| usage(format!("{name}={raw} is not a number")))?;
            if !value.is_number() {
                return Err(usage(format!("{name}={raw} is not a number")));
            }
            values.insert(field.to_string(), value);
        }
        Ok(Self { values })
    }

    pub fn threads(&self) -> anyhow::Result<Option<usize>> {
        self.values
            .get("threads")
            .map(|v| serde_json::from_value(v.clone()))
            .transpose()
            .map_err(|e| usage(format!("{ENV_PREFIX}THREADS: {e}")))
    }
}

/// Overlays flags on the file section and fills remaining gaps from the
/// environment, for fields the command actually has. The serialized field
/// set of `T` (flattened parts included) is the set of accepted keys.
pub fn resolve<T: Serialize + DeserializeOwned>(
    flags: &T,
    file: &FileConfig,
    env: &EnvConfig,
    section: &str,
) -> anyhow::Result<T> {
    let mut merged = file.section(section)?;
    let Value::Object(flag_map) = serde_json::to_value(flags)? else {
        unreachable!("argument structs serialize to objects");
    };
    let known: Vec<String> = flag_map.keys().cloned().collect();
    if let Some(k) = merged.keys().find(|k| !known.contains(k)) {
        return Err(usage(format!(
            "unknown key `{k}` in config section `{section}` (expected one of: {})",
            known.join(", ")
        )));
    }
    for (k, v) in flag_map {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    for (k, v) in &env.values {
        if known.contains(k) && merged.get(k).map_or(true, Value::is_null) {
            merged.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| usage(format!("config section `{section}`: {e}")))
}
