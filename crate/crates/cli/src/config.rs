//! Layered configuration: flags, then environment (seed and output
//! directory only), then a flat TOML file, then built-in defaults.
//!
//! Environment overrides are applied by clap, so a flag value seen here
//! already has them folded in. File keys are the flag names in snake_case.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use crate::error::{CliError, Result};

/// Rendering of a resolved value in the report header.
pub trait ConfigValue {
    fn render(&self) -> String;
}

macro_rules! display_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

display_value!(usize, u64, bool, String);

impl ConfigValue for f64 {
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for PathBuf {
    fn render(&self) -> String {
        self.display().to_string()
    }
}

#[derive(Debug, Default)]
pub struct Resolver {
    file: toml::Table,
    used: BTreeSet<String>,
    resolved: Vec<(String, String)>,
}

impl Resolver {
    pub fn from_file(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| CliError::Io { path: p.to_path_buf(), source })?;
                Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        if let Some((key, _)) = file.iter().find(|(_, v)| v.is_table() || v.is_array()) {
            return Err(CliError::Config(format!("key {key:?} must be a plain value")));
        }
        Ok(Self { file, ..Self::default() })
    }

    fn file_value<T: DeserializeOwned>(&mut self, key: &str) -> Result<Option<T>> {
        self.used.insert(key.to_string());
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v
                .clone()
                .try_into()
                .map(Some)
                .map_err(|e| CliError::Config(format!("key {key:?}: {e}"))),
        }
    }

    /// Flag, else file, else `None`; echoed when present.
    pub fn optional<T: DeserializeOwned + ConfigValue>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let from_file = self.file_value(key)?;
        let value = flag.or(from_file);
        if let Some(v) = &value {
            self.resolved.push((key.to_string(), v.render()));
        }
        Ok(value)
    }

    pub fn value<T: DeserializeOwned + ConfigValue>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let from_file = self.file_value(key)?;
        let value = flag.or(from_file).unwrap_or(default);
        self.resolved.push((key.to_string(), value.render()));
        Ok(value)
    }

    pub fn required<T: DeserializeOwned + ConfigValue>(&mut self, key: &str, flag: Option<T>) -> Result<T> {
        self.optional(key, flag)?
            .ok_or_else(|| CliError::Config(format!("missing required value {key:?} (flag --{})", key.replace('_', "-"))))
    }

    /// Resolves a value that is not echoed, such as the output directory.
    pub fn quiet<T: DeserializeOwned>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let from_file = self.file_value(key)?;
        Ok(flag.or(from_file))
    }

    /// The resolved key-value pairs in resolution order. Rejects file keys no
    /// command asked for.
    pub fn finish(self) -> Result<Vec<(String, String)>> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.used.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(CliError::Config(format!("unknown config keys {unknown:?}")));
        }
        Ok(self.resolved)
    }
}
