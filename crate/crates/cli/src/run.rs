//! Run directories and the experiment manifest.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use paclab_core::data::SplitManifest;
use paclab_core::train::TrainerSpec;
use serde::{Deserialize, Serialize};

pub const INCOMPLETE: &str = "INCOMPLETE";

/// A directory under the runs root that stays marked `INCOMPLETE` until
/// [`RunDir::finish`] is called.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path, name: &str) -> Result<Self> {
        let path = root.join(name);
        std::fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        std::fs::write(path.join(INCOMPLETE), b"")
            .with_context(|| format!("marking {}", path.display()))?;
        Ok(Self { path })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.file(name);
        std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, serde_json::to_string_pretty(value)?)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let marker = self.path.join(INCOMPLETE);
        std::fs::remove_file(&marker).with_context(|| format!("removing {}", marker.display()))?;
        Ok(self.path)
    }
}

/// Everything needed to repeat a training run bit-identically.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub format: String,
    pub tool_version: String,
    pub command: String,
    pub spec: TrainerSpec,
    pub spec_hash: String,
    pub split: SplitManifest,
    pub split_hash: String,
    pub source_hash: String,
    pub target_hash: String,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<String>,
}

impl ExperimentManifest {
    pub const FORMAT: &'static str = "paclab.experiment.v1";

    pub fn new(command: &str, spec: &TrainerSpec, split: &SplitManifest, artifacts: &[&str]) -> Self {
        Self {
            format: Self::FORMAT.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            spec: spec.clone(),
            spec_hash: spec.hash(),
            split: split.clone(),
            split_hash: split.hash(),
            source_hash: split.source_hash.clone(),
            target_hash: split.target_hash.clone(),
            seeds: vec![spec.train.seed],
            artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: Self = serde_json::from_str(&text).map_err(paclab_core::Error::from)?;
        if m.format != Self::FORMAT {
            return Err(paclab_core::Error::Format(format!("unsupported manifest format {}", m.format)).into());
        }
        if m.spec.hash() != m.spec_hash || m.split.hash() != m.split_hash {
            return Err(paclab_core::Error::Validation("manifest hashes do not match its contents".into()).into());
        }
        Ok(m)
    }
}
