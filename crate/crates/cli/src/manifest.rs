use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one command invocation, written next to its outputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Arguments that affect the outputs, in command-line order.
    pub args: Vec<String>,
    pub inputs: Vec<FileDigest>,
    /// Digest over the input digests and `args`.
    pub input_hash: String,
    pub outputs: Vec<FileDigest>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{:02x}", b)).collect()
}

/// Git-style content hash: SHA-256 of `"blob <len>\0" ++ content`.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

pub fn file_digest(path: &Path) -> CliResult<FileDigest> {
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: content_hash(&fs::read(path)?),
    })
}

impl RunManifest {
    pub fn new(command: &str, config: Option<&Path>, seed: u64, output_dir: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            config: config.map(Path::to_path_buf),
            seed,
            output_dir: output_dir.to_path_buf(),
            args: Vec::new(),
            inputs: Vec::new(),
            input_hash: String::new(),
            outputs: Vec::new(),
        }
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.args.push(format!("{}={}", key, value.to_string()));
        self
    }

    pub fn input(&mut self, path: &Path) -> CliResult<&mut Self> {
        self.inputs.push(file_digest(path)?);
        Ok(self)
    }

    /// Hash the inputs, digest every file in `outputs` and write `manifest.json`.
    pub fn finish(mut self, outputs: &[PathBuf]) -> CliResult<RunManifest> {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update(self.seed.to_le_bytes());
        for d in &self.inputs {
            h.update(d.sha256.as_bytes());
        }
        for a in &self.args {
            h.update(a.as_bytes());
            h.update([0]);
        }
        self.input_hash = hex(&h.finalize());
        self.outputs = outputs
            .iter()
            .map(|p| file_digest(p))
            .collect::<CliResult<_>>()?;
        let path = self.output_dir.join(MANIFEST_FILE);
        fs::write(path, serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(self)
    }

    pub fn output(&self, name: &str) -> Option<&FileDigest> {
        self.outputs
            .iter()
            .find(|d| d.path.file_name().is_some_and(|f| f == name))
    }
}
