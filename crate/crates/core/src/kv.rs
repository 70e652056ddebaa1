//! Flat `key = value` configuration text.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored. Keys are
//! free-form strings; grouped records use dotted indices such as
//! `dynamic.2.alpha = 0.15`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key {key:?}")]
    Duplicate { line: usize, key: String },
    #[error("missing key {0:?}")]
    Missing(String),
    #[error("key {key:?}: cannot parse {value:?}")]
    Parse { key: String, value: String },
}

/// Ordered map of configuration entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(KvError::Syntax { line: i + 1, text: raw.to_string() });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(KvError::Syntax { line: i + 1, text: raw.to_string() });
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(KvError::Duplicate { line: i + 1, key: key.to_string() });
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| KvError::Parse { key: key.to_string(), value: v.clone() }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, KvError> {
        self.get(key)?.ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, KvError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Number of consecutive groups `prefix.0.*`, `prefix.1.*`, ...
    pub fn group_count(&self, prefix: &str) -> usize {
        let mut n = 0;
        loop {
            let head = format!("{prefix}.{n}.");
            if self.entries.range(head.clone()..).next().is_some_and(|(k, _)| k.starts_with(&head)) {
                n += 1;
            } else {
                return n;
            }
        }
    }

    /// Copies entries from `other`, replacing existing keys.
    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let kv = KeyValues::parse("# header\nfov = 1.0\n\nn_phases = 16 # trailing\n").unwrap();
        assert_eq!(kv.require::<f64>("fov").unwrap(), 1.0);
        assert_eq!(kv.require::<usize>("n_phases").unwrap(), 16);
        assert_eq!(kv.len(), 2);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(KeyValues::parse("fov 1.0"), Err(KvError::Syntax { line: 1, .. })));
        assert!(matches!(KeyValues::parse("a = 1\na = 2"), Err(KvError::Duplicate { line: 2, .. })));
        let kv = KeyValues::parse("a = x").unwrap();
        assert!(matches!(kv.require::<f64>("a"), Err(KvError::Parse { .. })));
        assert!(matches!(kv.require::<f64>("b"), Err(KvError::Missing(_))));
    }

    #[test]
    fn counts_indexed_groups() {
        let kv = KeyValues::parse("e.0.a = 1\ne.0.b = 2\ne.1.a = 3\ne.3.a = 4\nf.0.a = 1").unwrap();
        assert_eq!(kv.group_count("e"), 2);
        assert_eq!(kv.group_count("f"), 1);
        assert_eq!(kv.group_count("g"), 0);
    }

    #[test]
    fn display_round_trips() {
        let mut kv = KeyValues::new();
        kv.set("x", 1.5);
        kv.set("name", "disk");
        let back = KeyValues::parse(&kv.to_string()).unwrap();
        assert_eq!(back, kv);
    }
}
