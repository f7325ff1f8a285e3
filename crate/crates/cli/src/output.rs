//! Files produced by a command and their JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// One output file held in memory until written.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub file_name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(file_name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            file_name: file_name.into(),
            bytes,
        }
    }

    /// Serializes `rows` as CSV with a header taken from the row type.
    pub fn csv<T: Serialize>(file_name: impl Into<String>, rows: &[T]) -> Result<Self> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(Self::new(file_name, bytes))
    }

    pub fn json<T: Serialize>(file_name: impl Into<String>, value: &T) -> Result<Self> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        Ok(Self::new(file_name, bytes))
    }
}

#[derive(Clone, Debug)]
pub struct CommandOutput {
    pub command: &'static str,
    /// Fully resolved configuration the command ran with.
    pub config: serde_json::Value,
    pub artifacts: Vec<Artifact>,
    /// Headline numbers of the run.
    pub summary: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct FileEntry<'a> {
    file: &'a str,
    sha256: String,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    command: &'a str,
    version: &'a str,
    /// sha256 of the command name and the canonical resolved config.
    input_hash: String,
    config: &'a serde_json::Value,
    outputs: Vec<FileEntry<'a>>,
    summary: &'a serde_json::Value,
}

impl CommandOutput {
    pub fn input_hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.config).expect("config serializes");
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update([0u8]);
        h.update(&canonical);
        hex::encode(h.finalize())
    }

    pub fn sidecar(&self) -> Result<Artifact> {
        let sidecar = Sidecar {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            input_hash: self.input_hash(),
            config: &self.config,
            outputs: self
                .artifacts
                .iter()
                .map(|a| FileEntry {
                    file: &a.file_name,
                    sha256: sha256_hex(&a.bytes),
                })
                .collect(),
            summary: &self.summary,
        };
        Artifact::json(format!("{}.json", self.command), &sidecar)
    }

    pub fn artifact(&self, file_name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.file_name == file_name)
    }

    /// Writes every artifact and the sidecar into `dir`, returning the paths.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let sidecar = self.sidecar()?;
        let mut paths = Vec::new();
        for a in self.artifacts.iter().chain(std::iter::once(&sidecar)) {
            let p = dir.join(&a.file_name);
            fs::write(&p, &a.bytes)?;
            paths.push(p);
        }
        Ok(paths)
    }
}
