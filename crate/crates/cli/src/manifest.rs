//! Per-command manifests: the full configuration, command arguments, and
//! SHA-256 hashes of every input and output file. Manifests carry no
//! timestamps, so re-running a command reproduces them byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{CliError, CliResult};

pub const TOOL: &str = "cre";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub arguments: BTreeMap<String, String>,
    pub config: Config,
    pub inputs: BTreeMap<String, FileRecord>,
    pub outputs: BTreeMap<String, FileRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Collects the files a command reads and writes.
pub struct Recorder {
    command: String,
    out_dir: PathBuf,
    arguments: BTreeMap<String, String>,
    inputs: BTreeMap<String, FileRecord>,
    outputs: BTreeMap<String, FileRecord>,
}

impl Recorder {
    pub fn new(command: &str, out_dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(out_dir).map_err(|e| CliError::context(out_dir, e))?;
        Ok(Recorder {
            command: command.to_string(),
            out_dir: out_dir.to_path_buf(),
            arguments: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn argument(&mut self, name: &str, value: impl ToString) {
        self.arguments.insert(name.to_string(), value.to_string());
    }

    /// Read an input file and record its hash.
    pub fn input(&mut self, name: &str, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = read_bytes(path)?;
        self.inputs.insert(
            name.to_string(),
            FileRecord {
                path: path.display().to_string(),
                sha256: sha256_hex(&bytes),
            },
        );
        Ok(bytes)
    }

    pub fn input_text(&mut self, name: &str, path: &Path) -> CliResult<String> {
        String::from_utf8(self.input(name, path)?).map_err(|e| CliError::context(path, e))
    }

    /// Write `bytes` to `file_name` in the output directory.
    pub fn output(&mut self, name: &str, file_name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.out_dir.join(file_name);
        fs::write(&path, bytes).map_err(|e| CliError::context(&path, e))?;
        self.outputs.insert(
            name.to_string(),
            FileRecord {
                path: path.display().to_string(),
                sha256: sha256_hex(bytes),
            },
        );
        Ok(path)
    }

    /// Write `<command>.manifest.json` and return it.
    pub fn finish(self, config: &Config) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.clone(),
            arguments: self.arguments,
            config: config.clone(),
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let path = self.out_dir.join(format!("{}.manifest.json", self.command));
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::context(&path, e))?;
        Ok(manifest)
    }
}

pub fn read_manifest(path: &Path) -> CliResult<RunManifest> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::context(path, e))
}
