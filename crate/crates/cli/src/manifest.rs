use std::fmt::Display;
use std::fs;
use std::path::Path;

use blindspot::kv::KvDoc;
use blindspot::{Error, Result};

/// Key = value record written next to every output.
#[derive(Debug, Default)]
pub struct RunManifest {
    doc: KvDoc,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let mut doc = KvDoc::new();
        doc.push("command", command);
        doc.push("version", env!("CARGO_PKG_VERSION"));
        RunManifest { doc }
    }

    pub fn arg(&mut self, name: &str, value: impl Display) -> &mut Self {
        self.doc.push(&format!("arg.{name}"), value);
        self
    }

    pub fn path(&mut self, name: &str, p: &Path) -> &mut Self {
        self.arg(name, p.display())
    }

    /// Adds every entry of `config` under `config.`.
    pub fn config(&mut self, config: &KvDoc) -> &mut Self {
        for (k, v) in config.entries() {
            self.doc.push(&format!("config.{k}"), v);
        }
        self
    }

    pub fn output(&mut self, p: &Path) -> &mut Self {
        self.doc.push("output", p.display());
        self
    }

    pub fn to_text(&self) -> String {
        self.doc.to_text()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
