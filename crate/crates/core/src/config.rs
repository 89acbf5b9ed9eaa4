//! Line-oriented `key = value` configuration files.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered key/value pairs. Later assignments override earlier ones.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvConfig {
    values: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines. Blank lines and anything after `#` are
    /// ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i as u64 + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse {
                    line: i as u64 + 1,
                    message: "empty key".into(),
                });
            }
            cfg.set(k, v.trim());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_owned(), value.into());
    }

    /// Applies `key=value` override strings on top of this config.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim());
        }
        Ok(())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Typed lookup; absent keys yield `None`, unparsable values an error.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("{key} = {v:?}: {e}"))),
        }
    }

    /// Overwrites `slot` when `key` is present.
    pub fn read_into<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Comma-separated list lookup.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|e| Error::Config(format!("{key}: {s:?}: {e}"))))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Sorted `key = value` lines; parses back to an equal config.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Copies every entry of `other` into `self`, prefixing keys.
    pub fn merge_prefixed(&mut self, prefix: &str, other: &KvConfig) {
        for (k, v) in &other.values {
            self.set(&format!("{prefix}{k}"), v.clone());
        }
    }

    /// Entries whose key starts with `prefix`, with the prefix removed.
    pub fn sub(&self, prefix: &str) -> KvConfig {
        let mut out = KvConfig::new();
        for (k, v) in &self.values {
            if let Some(rest) = k.strip_prefix(prefix) {
                out.set(rest, v.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut c = KvConfig::parse("# header\nlr = 0.01  # inline\n\nname=abc\n").unwrap();
        assert_eq!(c.get::<f64>("lr").unwrap(), Some(0.01));
        assert_eq!(c.get_str("name"), Some("abc"));
        c.apply_overrides(&["lr=0.5"]).unwrap();
        assert_eq!(c.get::<f64>("lr").unwrap(), Some(0.5));
        assert!(c.get::<u32>("name").is_err());
    }

    #[test]
    fn missing_equals_reports_line() {
        match KvConfig::parse("a = 1\noops\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn text_round_trip() {
        let c = KvConfig::parse("b = 2\na = x y\n").unwrap();
        assert_eq!(KvConfig::parse(&c.to_text()).unwrap(), c);
        let mut outer = KvConfig::new();
        outer.merge_prefixed("enc.", &c);
        assert_eq!(outer.sub("enc."), c);
    }

    #[test]
    fn list_values() {
        let c = KvConfig::parse("d = 1, 2,4").unwrap();
        assert_eq!(c.get_list::<usize>("d").unwrap(), Some(vec![1, 2, 4]));
    }
}
