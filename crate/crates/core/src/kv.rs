//! Flat `key = value` text used for configs, checkpoint headers and manifests.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered key/value document. Emission order is insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn extend(&mut self, other: &KvDoc) {
        self.entries.extend(other.entries.iter().cloned());
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::new();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(line, format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::config("", format!("line {}: empty key", lineno + 1)));
            }
            if seen.insert(k.to_string(), ()).is_some() {
                return Err(Error::config(k, "duplicate key"));
            }
            doc.push(k, v);
        }
        Ok(doc)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Consumes keys from a [`KvDoc`], rejecting anything left unread.
pub struct KvReader<'a> {
    doc: &'a KvDoc,
    used: Vec<bool>,
}

impl<'a> KvReader<'a> {
    pub fn new(doc: &'a KvDoc) -> Self {
        KvReader {
            doc,
            used: vec![false; doc.entries.len()],
        }
    }

    fn raw(&mut self, key: &str) -> Option<&'a str> {
        let idx = self.doc.entries.iter().position(|(k, _)| k == key)?;
        self.used[idx] = true;
        Some(self.doc.entries[idx].1.as_str())
    }

    pub fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::config(key, format!("cannot parse {v:?}: {e}"))),
        }
    }

    pub fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    pub fn required<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.opt(key)?
            .ok_or_else(|| Error::config(key, "missing required key"))
    }

    /// Comma-separated list; an empty value is the empty list.
    pub fn list_or<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let Some(v) = self.raw(key) else {
            return Ok(default);
        };
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|e| Error::config(key, format!("cannot parse {p:?}: {e}")))
            })
            .collect()
    }

    /// Marks every key with the given prefix as read, returning them.
    pub fn prefixed(&mut self, prefix: &str) -> Vec<(&'a str, &'a str)> {
        let mut out = Vec::new();
        for (i, (k, v)) in self.doc.entries.iter().enumerate() {
            if k.starts_with(prefix) {
                self.used[i] = true;
                out.push((k.as_str(), v.as_str()));
            }
        }
        out
    }

    pub fn finish(self) -> Result<()> {
        match self.used.iter().position(|u| !u) {
            Some(i) => Err(Error::config(&self.doc.entries[i].0, "unknown key")),
            None => Ok(()),
        }
    }
}

pub(crate) fn join<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}
