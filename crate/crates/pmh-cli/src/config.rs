//! Flat `key = value` configuration files.
//!
//! One assignment per line, `#` starts a comment, keys are namespaced with
//! dots (`medium.kind`, `solver.dt`). Every key a command does not consume
//! is an error, so typos never pass silently.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use pmh_core::{Error, Result};

/// Parsed configuration with consumption tracking.
#[derive(Debug)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected 'key = value', got '{line}'", idx + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(Error::config(format!("line {}: empty key", idx + 1)));
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::config(format!("line {}: duplicate key '{key}'", idx + 1)));
            }
        }
        Ok(RawConfig { entries, used: RefCell::new(BTreeSet::new()) })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// All raw entries, for echoing into manifests.
    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.raw(key)
            .ok_or_else(|| Error::config(format!("missing required key '{key}'")))
    }

    pub fn string_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.raw(key).unwrap_or(default)
    }

    fn parse_f64(key: &str, v: &str) -> Result<f64> {
        v.parse::<f64>()
            .map_err(|_| Error::config(format!("key '{key}': '{v}' is not a number")))
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.raw(key).map(|v| Self::parse_f64(key, v)).transpose()
    }

    pub fn req_f64(&self, key: &str) -> Result<f64> {
        let v = self.require(key)?;
        Self::parse_f64(key, v)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.get_f64(key)?.unwrap_or(default))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| Error::config(format!("key '{key}': '{v}' is not a count"))),
        }
    }

    pub fn req_usize(&self, key: &str) -> Result<usize> {
        let v = self.require(key)?;
        v.parse::<usize>()
            .map_err(|_| Error::config(format!("key '{key}': '{v}' is not a count")))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| Error::config(format!("key '{key}': '{v}' is not a seed"))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(v) => Err(Error::config(format!("key '{key}': '{v}' is not a boolean"))),
        }
    }

    /// Comma-separated list of numbers.
    pub fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|c| Self::parse_f64(key, c.trim()))
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    pub fn req_list(&self, key: &str) -> Result<Vec<f64>> {
        self.get_list(key)?
            .ok_or_else(|| Error::config(format!("missing required key '{key}'")))
    }

    /// `lo,hi` pair.
    pub fn get_pair(&self, key: &str) -> Result<Option<(f64, f64)>> {
        match self.get_list(key)? {
            None => Ok(None),
            Some(v) if v.len() == 2 => Ok(Some((v[0], v[1]))),
            Some(v) => {
                Err(Error::config(format!("key '{key}': expected 'lo,hi', got {} values", v.len())))
            }
        }
    }

    pub fn req_pair(&self, key: &str) -> Result<(f64, f64)> {
        self.get_pair(key)?
            .ok_or_else(|| Error::config(format!("missing required key '{key}'")))
    }

    pub fn pair_or(&self, key: &str, default: (f64, f64)) -> Result<(f64, f64)> {
        Ok(self.get_pair(key)?.unwrap_or(default))
    }

    /// Errors out if any key present in the file was never consumed.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self
            .entries
            .keys()
            .filter(|k| !used.contains(*k))
            .map(|k| k.as_str())
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!(
                "unknown key{} for this command: {}",
                if unknown.len() == 1 { "" } else { "s" },
                unknown.join(", ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_pairs() {
        let cfg = RawConfig::parse(
            "# a comment\n\
             medium.kind = periodic\n\
             \n\
             medium.a_range = 1.0, 2.0  # inline comment\n\
             solver.dt=1e-3\n",
        )
        .unwrap();
        assert_eq!(cfg.require("medium.kind").unwrap(), "periodic");
        assert_eq!(cfg.req_pair("medium.a_range").unwrap(), (1.0, 2.0));
        assert_eq!(cfg.req_f64("solver.dt").unwrap(), 1e-3);
        cfg.finish().unwrap();
    }

    #[test]
    fn rejects_malformed_lines_and_duplicates() {
        assert!(RawConfig::parse("no equals sign").is_err());
        assert!(RawConfig::parse("a = 1\na = 2").is_err());
        assert!(RawConfig::parse("= 1").is_err());
    }

    #[test]
    fn flags_unconsumed_keys_by_name() {
        let cfg = RawConfig::parse("solver.dt = 1e-3\nsolver.typo = 4").unwrap();
        cfg.req_f64("solver.dt").unwrap();
        let err = cfg.finish().unwrap_err().to_string();
        assert!(err.contains("solver.typo"), "{err}");
    }

    #[test]
    fn typed_getters_report_the_key() {
        let cfg = RawConfig::parse("a = x\nb = 1,2,3").unwrap();
        assert!(cfg.req_f64("a").unwrap_err().to_string().contains("'a'"));
        assert!(cfg.get_pair("b").unwrap_err().to_string().contains("3 values"));
        assert_eq!(cfg.req_list("b").unwrap(), vec![1.0, 2.0, 3.0]);
    }
}
