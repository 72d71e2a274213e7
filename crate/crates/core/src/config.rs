//! Flat `key = value` configuration files with optional `[section]` headers.
//!
//! ```text
//! # comment
//! [task]
//! id = intercept1d
//! dt = 0.05
//! [eval]
//! deltas = 0, 0.05, 0.1
//! ```
//!
//! Keys before the first header belong to the unnamed section `""`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = KvConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                cfg.sections.entry(section.clone()).or_default();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            cfg.sections
                .entry(section.clone())
                .or_default()
                .insert(key.to_string(), v.trim().to_string());
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KvConfig::parse(&text)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    /// Parses `key` if present.
    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse `{v}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>> {
        let Some(v) = self.raw(section, key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse `{s}`")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Serializes with sections in name order and keys sorted, so output is
    /// stable.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, keys) in &self.sections {
            if !name.is_empty() {
                let _ = writeln!(out, "[{name}]");
            }
            for (k, v) in keys {
                let _ = writeln!(out, "{k} = {v}");
            }
            out.push('\n');
        }
        out
    }
}
