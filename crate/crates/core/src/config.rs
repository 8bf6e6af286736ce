//! Strict INI-style key-value configuration.
//!
//! ```text
//! # comment
//! [beam]
//! wavelength = 0.8   ; trailing comments allowed
//! ```
//!
//! Every key must be consumed by the caller; [`Config::finish`] reports the
//! first one that was not.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(line: Option<usize>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { line, message: message.into() })
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Default)]
pub struct Config {
    sections: BTreeMap<String, (usize, BTreeMap<String, Entry>)>,
    used: RefCell<BTreeSet<(String, String)>>,
    seen_sections: RefCell<BTreeSet<String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return err(Some(line_no), format!("malformed section header `{line}`"));
                };
                let name = name.trim().to_ascii_lowercase();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                    return err(Some(line_no), format!("invalid section name `{name}`"));
                }
                if cfg.sections.contains_key(&name) {
                    return err(Some(line_no), format!("duplicate section [{name}]"));
                }
                cfg.sections.insert(name.clone(), (line_no, BTreeMap::new()));
                current = Some(name);
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return err(Some(line_no), format!("expected `key = value`, got `{line}`"));
            };
            let key = k.trim().to_ascii_lowercase();
            if key.is_empty() {
                return err(Some(line_no), "empty key");
            }
            let Some(sec) = current.as_ref() else {
                return err(Some(line_no), format!("key `{key}` appears before any [section]"));
            };
            let map = &mut cfg.sections.get_mut(sec).unwrap().1;
            if map.contains_key(&key) {
                return err(Some(line_no), format!("duplicate key `{key}` in [{sec}]"));
            }
            map.insert(key, Entry { value: v.trim().to_string(), line: line_no });
        }
        Ok(cfg)
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.contains_key(name)
    }

    pub fn section<'a>(&'a self, name: &str) -> Option<Section<'a>> {
        self.sections.get(name).map(|(line, map)| {
            self.seen_sections.borrow_mut().insert(name.to_string());
            Section { cfg: self, name: name.to_string(), line: *line, map }
        })
    }

    /// Fails on the first section or key that nothing asked for.
    pub fn finish(&self) -> Result<(), ConfigError> {
        let used = self.used.borrow();
        let seen = self.seen_sections.borrow();
        let mut worst: Option<ConfigError> = None;
        for (sec, (sline, map)) in &self.sections {
            if !seen.contains(sec) {
                let e = ConfigError { line: Some(*sline), message: format!("unknown section [{sec}]") };
                if worst.as_ref().is_none_or(|w| w.line > e.line) {
                    worst = Some(e);
                }
                continue;
            }
            for (k, e) in map {
                if !used.contains(&(sec.clone(), k.clone())) {
                    let ce = ConfigError { line: Some(e.line), message: format!("unknown key `{k}` in [{sec}]") };
                    if worst.as_ref().is_none_or(|w| w.line > ce.line) {
                        worst = Some(ce);
                    }
                }
            }
        }
        match worst {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

fn strip_comment(s: &str) -> &str {
    let cut = s.find(['#', ';']).unwrap_or(s.len());
    &s[..cut]
}

pub struct Section<'a> {
    cfg: &'a Config,
    name: String,
    line: usize,
    map: &'a BTreeMap<String, Entry>,
}

impl<'a> Section<'a> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn line(&self) -> usize {
        self.line
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|k| k.as_str())
    }

    fn mark(&self, key: &str) {
        self.cfg.used.borrow_mut().insert((self.name.clone(), key.to_string()));
    }

    pub fn raw(&self, key: &str) -> Option<(&'a str, usize)> {
        let e = self.map.get(key)?;
        self.mark(key);
        Some((e.value.as_str(), e.line))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| ConfigError { line: Some(line), message: format!("cannot parse `{v}` for key `{key}` in [{}]", self.name) }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        match self.get(key)? {
            Some(v) => Ok(v),
            None => err(Some(self.line), format!("missing key `{key}` in [{}]", self.name)),
        }
    }

    /// Positive finite float with a line-numbered error otherwise.
    pub fn positive(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        let v: Option<f64> = self.get(key)?;
        if let Some(x) = v {
            if !(x > 0.0 && x.is_finite()) {
                let line = self.map.get(key).map(|e| e.line);
                return err(line, format!("`{key}` in [{}] must be > 0, got {x}", self.name));
            }
        }
        Ok(v)
    }

    pub fn error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError { line: self.map.get(key).map(|e| e.line).or(Some(self.line)), message: message.into() }
    }
}
