//! Plain-text `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are skipped. Keys may repeat; typed
//! getters report the line of the offending entry.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: Vec<Entry>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(Error::Config { line, message: format!("expected `key = value`, got `{trimmed}`") });
            };
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Config { line, message: format!("invalid key `{key}`") });
            }
            entries.push(Entry { line, key: key.to_string(), value: v.trim().to_string() });
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Entries whose key passes `keep`, line numbers preserved.
    pub fn subset(&self, keep: impl Fn(&str) -> bool) -> Self {
        Self { entries: self.entries.iter().filter(|e| keep(&e.key)).cloned().collect() }
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Fails on the first key not in `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        let allowed: BTreeSet<&str> = allowed.iter().copied().collect();
        match self.entries.iter().find(|e| !allowed.contains(e.key.as_str())) {
            Some(e) => Err(Error::Config { line: e.line, message: format!("unknown key `{}`", e.key) }),
            None => Ok(()),
        }
    }

    fn last(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().rev().find(|e| e.key == key)
    }

    pub fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a Entry> + 'a {
        self.entries.iter().filter(move |e| e.key == key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.last(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|_| Error::Config {
                line: e.line,
                message: format!("cannot parse `{}` for key `{key}`", e.value),
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }
}

/// Whitespace-separated numeric fields of one entry.
pub fn parse_fields(entry: &Entry, expected: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = entry
        .value
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config { line: entry.line, message: format!("non-numeric field in `{}`", entry.value) })?;
    if vals.len() != expected {
        return Err(Error::Config {
            line: entry.line,
            message: format!("`{}` expects {expected} fields, got {}", entry.key, vals.len()),
        });
    }
    Ok(vals)
}

/// Accumulates resolved settings for the config-echo sidecar.
#[derive(Debug, Default, Clone)]
pub struct Echo(String);

impl Echo {
    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.0, "{key} = {value}");
        self
    }

    pub fn text(&self) -> &str {
        &self.0
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, &self.0).map_err(|e| Error::io(path, e))
    }
}
