//! Staged output directories with a manifest written before the outputs land.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything needed to re-run a command.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub out: String,
    pub tool_version: &'static str,
    pub config_digest: Option<String>,
    pub arguments: Vec<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, out: &Path) -> Self {
        Self {
            command: command.to_owned(),
            scenario: None,
            seed: None,
            out: out.display().to_string(),
            tool_version: TOOL_VERSION,
            config_digest: None,
            arguments: std::env::args().skip(1).collect(),
            outputs: Vec::new(),
        }
    }
}

pub struct OutDir {
    dir: PathBuf,
    staged: Vec<String>,
}

fn partial(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!(".{name}.partial"))
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), staged: Vec::new() })
    }

    pub fn stage(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = partial(&self.dir, name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.staged.push(name.to_owned());
        Ok(())
    }

    /// Renames the manifest into place first, then every staged output.
    pub fn finish(self, mut manifest: RunManifest) -> Result<()> {
        manifest.outputs = self.staged.clone();
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let tmp = partial(&self.dir, "manifest.json");
        fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, self.dir.join("manifest.json"))?;
        for name in &self.staged {
            fs::rename(partial(&self.dir, name), self.dir.join(name))
                .with_context(|| format!("finalizing {name}"))?;
        }
        Ok(())
    }
}
