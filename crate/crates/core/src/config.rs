//! Flat `key = value` configuration files.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed `key = value` pairs. Blank lines and lines starting with `#` are ignored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{k}'", n + 1)));
            }
        }
        Ok(Config { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("bad value '{v}' for '{key}'"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key).ok_or_else(|| Error::Config(format!("missing key '{key}'")))?;
        v.parse().map_err(|_| Error::Config(format!("bad value '{v}' for '{key}'")))
    }

    /// Comma-separated numbers; `inf` is accepted.
    pub fn list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => v.split(',').map(|s| parse_f64(s.trim(), key)).collect(),
        }
    }

    /// Rejects keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(Error::Config(format!("unknown key '{k}'"))),
            None => Ok(()),
        }
    }
}

/// Parses a number, accepting `inf`.
pub fn parse_f64(s: &str, key: &str) -> Result<f64> {
    match s {
        "inf" | "infinity" | "∞" => Ok(f64::INFINITY),
        _ => s.parse().map_err(|_| Error::Config(format!("bad number '{s}' for '{key}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_lookup() {
        let c = Config::parse("# plan\nm = 64\nextent=16.0\n\nps = 1, 2, inf\nbump = logarithmic\n").unwrap();
        assert_eq!(c.require::<usize>("m").unwrap(), 64);
        assert_eq!(c.get_or("extent", 0.0).unwrap(), 16.0);
        assert_eq!(c.get_or("delta", 0.1).unwrap(), 0.1);
        assert_eq!(c.list_or("ps", &[]).unwrap(), vec![1.0, 2.0, f64::INFINITY]);
        assert_eq!(c.raw("bump"), Some("logarithmic"));
        assert!(c.check_keys(&["m", "extent", "ps", "bump"]).is_ok());
        assert!(c.check_keys(&["m"]).is_err());
        assert!(c.require::<usize>("extent").is_err());
    }

    #[test]
    fn malformed_lines() {
        assert!(Config::parse("m 64").is_err());
        assert!(Config::parse("= 3").is_err());
        assert!(Config::parse("a=1\na=2").is_err());
    }
}
