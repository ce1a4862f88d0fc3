//! Record of how a command was run: arguments, resolved configuration and
//! the hashes of every input file.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputFile>,
    #[serde(skip)]
    pub path: Option<PathBuf>,
}

impl RunManifest {
    pub fn new(command: Vec<String>, workers: Option<usize>, path: Option<PathBuf>) -> Self {
        RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: None,
            workers,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            path,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let sha256 = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.push(InputFile {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    /// Hashes the files that define a saved model.
    pub fn model(&mut self, dir: &Path) -> Result<()> {
        for f in ["model.toml", "vocab.tsv", "params.ckpt"] {
            self.input(&dir.join(f))?;
        }
        Ok(())
    }

    /// Writes the manifest, if it has a destination. Called once the
    /// inputs are known and before the expensive work starts.
    pub fn start(&self) -> Result<()> {
        if let Some(p) = &self.path {
            let text = serde_json::to_string_pretty(self)? + "\n";
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
        }
        Ok(())
    }
}
