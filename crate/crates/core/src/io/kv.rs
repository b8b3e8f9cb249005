//! Flat `key = value` config text with optional `[section]` headers.
//!
//! ```text
//! seed = 3
//! [privacy]
//! epsilon = 1      # stored as privacy.epsilon
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::{with_path, IoError};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| IoError::Config { line: i + 1, message: "unterminated section header".into() })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| IoError::Config { line: i + 1, message: format!("expected `key = value`, got `{line}`") })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(IoError::Config { line: i + 1, message: "empty key".into() });
            }
            let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            entries.insert(full, unquote(value.trim()).to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::parse(&with_path(path, std::fs::read_to_string(path))?)
    }

    /// Applies a `dotted.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), IoError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| IoError::Config { line: 0, message: format!("override `{assignment}` is not key=value") })?;
        self.set(k.trim(), unquote(v.trim()));
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Canonical text: one `key = value` line per entry in key order.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}
