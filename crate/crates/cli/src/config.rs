//! Flat key-value configuration files and flag/config/default resolution.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;

/// Keys are normalized so that `q_max` and `q-max` are the same key.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    table: toml::Table,
}

fn normalize(key: &str) -> String {
    key.replace('_', "-")
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config file {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: toml::Table = text.parse()?;
        let mut table = toml::Table::new();
        for (k, v) in raw {
            if v.is_table() {
                bail!("config file must be flat; key `{k}` holds a table");
            }
            table.insert(normalize(&k), v);
        }
        Ok(Self { table })
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.table.get(&normalize(key)) {
            None => Ok(None),
            Some(v) => v
                .clone()
                .try_into()
                .map(Some)
                .with_context(|| format!("config key `{key}` has the wrong type")),
        }
    }

    /// Flag value, else config value, else `default`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.pick_opt(flag, key)?.unwrap_or(default))
    }

    pub fn pick_opt<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}
