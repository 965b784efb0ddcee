//! Flat `key=value` config files. Flags always win over file values.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use mrf_core::{Error, Result};

#[derive(Debug, Default)]
pub struct FileCfg(HashMap<String, String>);

impl FileCfg {
    pub fn load(path: Option<&Path>) -> Result<FileCfg> {
        let Some(path) = path else {
            return Ok(FileCfg::default());
        };
        let text = std::fs::read_to_string(path)?;
        let mut map = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(FileCfg(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                Error::InvalidConfig(format!("config key {key}={raw}: {e}"))
            }),
        }
    }

    /// Flag value if given, else config-file value, else default.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    /// Like `pick` but the value must come from the flag or the file.
    pub fn pick_required<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => self.get(key)?.ok_or_else(|| {
                Error::InvalidConfig(format!("missing required option --{key} (or config key {key})"))
            }),
        }
    }
}
