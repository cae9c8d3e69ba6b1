//! Plain-text `key=value` configuration files.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{AtcError, Result};

/// Parsed `key=value` lines. Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValueConfig {
    entries: BTreeMap<String, String>,
}

impl KeyValueConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| AtcError::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(AtcError::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(AtcError::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses `key` if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| AtcError::Config(format!("invalid value `{v}` for `{key}`")))
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| AtcError::Config(format!("missing required key `{key}`")))
    }

    /// Parses a comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(key).map(|v| parse_list(v, key)).transpose()
    }
}

pub fn parse_list<T: FromStr>(value: &str, key: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| AtcError::Config(format!("invalid list item `{s}` for `{key}`")))
        })
        .collect()
}
