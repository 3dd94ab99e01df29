use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use placekd::{Error, Result};

pub const RUN_CONFIG_VERSION: u32 = 1;

/// Everything needed to rerun a command: pass it back with `--config`.
#[derive(Debug, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig<T> {
    pub version: u32,
    pub command: String,
    pub args: T,
}

fn read_table(path: &Path, command: &str) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let value: Value = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        _ => serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
    };
    let Value::Object(mut table) = value else {
        return Err(Error::Config(format!("{}: expected a table of options", path.display())));
    };
    // a run_config.json echo is accepted as is
    if let Some(c) = table.get("command").cloned() {
        if c.as_str() != Some(command) {
            return Err(Error::Config(format!(
                "{}: recorded for command {c}, not `{command}`",
                path.display()
            )));
        }
        match table.remove("args") {
            Some(Value::Object(args)) => return Ok(args),
            _ => return Err(Error::Config(format!("{}: run config without args", path.display()))),
        }
    }
    Ok(table)
}

/// Overlays the flags given on the command line onto the config file.
/// Keys are the flag names without the leading dashes; unknown keys fail.
pub fn resolve<T>(flags: &T, file: Option<&PathBuf>, command: &str) -> Result<T>
where
    T: Serialize + DeserializeOwned,
{
    let mut table = match file {
        Some(p) => read_table(p, command)?,
        None => Map::new(),
    };
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            if !v.is_null() {
                table.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(table)).map_err(|e| Error::Config(e.to_string()))
}

pub fn need<T: Clone>(v: &Option<T>, key: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::Config(format!("missing required option --{key}")))
}

/// Parses a snake_case enum name the way config files spell it.
pub fn parse_name<T: DeserializeOwned>(s: &str, key: &str) -> Result<T> {
    serde_json::from_value(Value::String(s.replace('-', "_")))
        .map_err(|_| Error::Config(format!("invalid value `{s}` for --{key}")))
}
