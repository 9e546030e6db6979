//! Flat `key = value` configuration files and their content hash.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Parsed `key = value` pairs with the line each came from.
/// `#` starts a comment; blank lines are skipped; keys may appear once.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlatConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(Error::Parse { line: i + 1, msg: format!("expected key = value, got '{line}'") })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse { line: i + 1, msg: "empty key".into() });
            }
            if entries.insert(key.clone(), (v.trim().to_string(), i + 1)).is_some() {
                return Err(Error::Parse { line: i + 1, msg: format!("duplicate key '{key}'") });
            }
        }
        Ok(FlatConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses `key` if present; the error names the line.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::Parse { line: *line, msg: format!("{key}: {e}") }),
        }
    }

    /// Comma-separated list under `key`.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|e| Error::Parse { line: *line, msg: format!("{key}: {e}") }))
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    /// Fails on the first key outside `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        for (k, (_, line)) in &self.entries {
            if !known.contains(&k.as_str()) {
                return Err(Error::Parse { line: *line, msg: format!("unknown key '{k}'") });
            }
        }
        Ok(())
    }
}

/// Hex SHA-256 of `text`.
pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_lists_and_errors() {
        let c = FlatConfig::parse("# run\nseed = 3\n\neval_sizes = 12, 24,48  # sizes\nname=x=y\n").unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), Some(3));
        assert_eq!(c.get_list::<usize>("eval_sizes").unwrap(), Some(vec![12, 24, 48]));
        assert_eq!(c.raw("name"), Some("x=y"));
        assert_eq!(c.get::<u64>("missing").unwrap(), None);
        assert!(matches!(c.get::<u64>("name"), Err(Error::Parse { line: 5, .. })));
        assert!(matches!(FlatConfig::parse("a = 1\nb\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(FlatConfig::parse("a = 1\na = 2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(c.reject_unknown(&["seed", "eval_sizes"]), Err(Error::Parse { line: 5, .. })));
    }

    #[test]
    fn hash_is_sha256() {
        assert_eq!(config_hash("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
