//! Flat `key = value` text: one entry per line, `#` starts a comment, keys
//! are dotted (`model.growth`, `optim.lr`, ...).

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::config(format!("line {}: duplicate key {k}", lineno + 1)));
            }
        }
        Ok(KvMap { entries })
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn set_list<V: Display>(&mut self, key: impl Into<String>, values: &[V]) {
        let s: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.entries.insert(key.into(), s.join(","));
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Parsed value for `key`, or `None` when absent.
    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| Error::config(format!("{key}: cannot parse {s:?}"))),
        }
    }

    pub fn get_or<V: FromStr>(&self, key: &str, default: V) -> Result<V> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<V: FromStr>(&self, key: &str) -> Result<V> {
        self.get(key)?.ok_or_else(|| Error::config(format!("missing required key {key}")))
    }

    pub fn get_list<V: FromStr>(&self, key: &str) -> Result<Option<Vec<V>>> {
        let Some(s) = self.entries.get(key) else { return Ok(None) };
        if s.trim().is_empty() {
            return Ok(Some(Vec::new()));
        }
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| Error::config(format!("{key}: cannot parse {p:?}"))))
            .collect::<Result<Vec<V>>>()
            .map(Some)
    }

    /// Keys under `prefix.` that are not in `known`.
    pub fn unknown_keys(&self, prefix: &str, known: &[&str]) -> Vec<String> {
        self.entries
            .keys()
            .filter(|k| k.starts_with(prefix) && !known.contains(&&k[prefix.len()..]))
            .cloned()
            .collect()
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> KvMap {
        let p = format!("{prefix}.");
        KvMap {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn with_prefix(&self, prefix: &str) -> KvMap {
        KvMap { entries: self.entries.iter().map(|(k, v)| (format!("{prefix}.{k}"), v.clone())).collect() }
    }

    pub fn extend(&mut self, other: KvMap) {
        self.entries.extend(other.entries);
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_sections_and_lists() {
        let kv = KvMap::parse("# header\nmodel.growth = 8\nmodel.spp = 8, 16,32 # trailing\n\noptim.lr=2e-4\n").unwrap();
        let model = kv.section("model");
        assert_eq!(model.require::<usize>("growth").unwrap(), 8);
        assert_eq!(model.get_list::<usize>("spp").unwrap().unwrap(), vec![8, 16, 32]);
        assert_eq!(kv.require::<f64>("optim.lr").unwrap(), 2e-4);
        assert!(kv.require::<f64>("optim.beta").is_err());
        assert!(KvMap::parse("novalue\n").is_err());
        assert!(KvMap::parse("a=1\na=2\n").is_err());
        let round = KvMap::parse(&kv.to_text()).unwrap();
        assert_eq!(round, kv);
    }
}
