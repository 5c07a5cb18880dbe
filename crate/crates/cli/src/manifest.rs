//! Run manifests: everything needed to rerun a command, written next to each
//! output file as `<output>.manifest.json`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Fully resolved flag values; `--config <manifest>` replays them.
    pub options: serde_json::Value,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timestamp: String,
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

impl RunManifest {
    pub fn new(command: &str, options: impl Serialize, seed: Option<u64>, jobs: Option<usize>) -> Result<Self> {
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            options: serde_json::to_value(options)?,
            seed,
            jobs,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    /// Digests the outputs and writes the manifest beside the first one.
    pub fn finish(mut self, outputs: &[&Path]) -> Result<PathBuf> {
        for p in outputs {
            self.outputs.push(digest(p)?);
        }
        let target = manifest_path(outputs.first().context("manifest needs an output file")?);
        let text = serde_json::to_string_pretty(&self)? + "\n";
        std::fs::write(&target, text).with_context(|| format!("writing {}", target.display()))?;
        Ok(target)
    }
}
