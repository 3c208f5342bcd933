//! Flat `key=value` text files, the format shared by schemas and configs.
//!
//! One pair per line. Blank lines and lines starting with `#` are ignored.
//! Keys are unique; values keep everything after the first `=` (trimmed).

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;

use crate::error::DataError;

/// An ordered collection of key/value pairs with unique keys.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvFile {
    pairs: Vec<(String, String)>,
    index: BTreeMap<String, usize>,
}

impl KvFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut kv = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(DataError::Parse {
                    line: i + 1,
                    detail: format!("expected `key=value`, got `{line}`"),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(DataError::Parse {
                    line: i + 1,
                    detail: "empty key".into(),
                });
            }
            kv.push(key, value.trim()).map_err(|_| DataError::Parse {
                line: i + 1,
                detail: format!("duplicate key `{key}`"),
            })?;
        }
        Ok(kv)
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Appends a pair; fails on duplicate keys.
    pub fn push(&mut self, key: &str, value: impl Display) -> Result<(), DataError> {
        if self.index.contains_key(key) {
            return Err(DataError::BadValue {
                key: key.into(),
                detail: "duplicate key".into(),
            });
        }
        self.index.insert(key.into(), self.pairs.len());
        self.pairs.push((key.into(), value.to_string()));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.index.get(key).map(|&i| self.pairs[i].1.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, DataError> {
        self.get(key).ok_or_else(|| DataError::MissingKey { key: key.into() })
    }

    pub fn require_usize(&self, key: &str) -> Result<usize, DataError> {
        parse_one(key, self.require(key)?)
    }

    pub fn require_u64(&self, key: &str) -> Result<u64, DataError> {
        parse_one(key, self.require(key)?)
    }

    pub fn require_f64(&self, key: &str) -> Result<f64, DataError> {
        let v: f64 = parse_one(key, self.require(key)?)?;
        if !v.is_finite() {
            return Err(DataError::BadValue {
                key: key.into(),
                detail: "value must be finite".into(),
            });
        }
        Ok(v)
    }

    pub fn opt_usize(&self, key: &str, default: usize) -> Result<usize, DataError> {
        match self.get(key) {
            Some(v) => parse_one(key, v),
            None => Ok(default),
        }
    }

    pub fn opt_f64(&self, key: &str, default: f64) -> Result<f64, DataError> {
        match self.get(key) {
            Some(v) => parse_one(key, v),
            None => Ok(default),
        }
    }

    pub fn opt_str(&self, key: &str, default: &str) -> String {
        self.get(key).unwrap_or(default).to_string()
    }

    /// Comma-separated list of floats.
    pub fn require_f64_list(&self, key: &str) -> Result<Vec<f64>, DataError> {
        self.require(key)?
            .split(',')
            .map(|s| parse_one::<f64>(key, s.trim()))
            .collect()
    }

    /// Comma-separated list of unsigned integers.
    pub fn require_usize_list(&self, key: &str) -> Result<Vec<usize>, DataError> {
        self.require(key)?
            .split(',')
            .map(|s| parse_one::<usize>(key, s.trim()))
            .collect()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|(k, _)| k.as_str())
    }

    /// Renders back to text, one pair per line in insertion order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.pairs {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

fn parse_one<T: std::str::FromStr>(key: &str, text: &str) -> Result<T, DataError> {
    text.parse().map_err(|_| DataError::BadValue {
        key: key.into(),
        detail: format!("cannot parse `{text}`"),
    })
}

/// Formats a float list the way `require_f64_list` reads it.
pub(crate) fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub(crate) fn join_usize(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
