use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};
use crate::rng::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "formmi-run";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Incomplete,
}

/// Provenance record of a run directory. Holds no timestamps or host
/// details, so identical runs produce identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub tool_version: String,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alphabet_hash: Option<String>,
    /// Relative path to lowercase hex SHA-256.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let bytes = read_file(&run_dir.join(MANIFEST_FILE))?;
        let m: Self = serde_json::from_slice(&bytes)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::data(format!("not a run manifest (format {:?})", m.format)));
        }
        Ok(m)
    }

    /// Checks every listed file against its recorded hash.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        for (name, hash) in &self.files {
            let found = sha256_hex(&read_file(&run_dir.join(name))?);
            if &found != hash {
                return Err(Error::data(format!(
                    "{name}: content hash {found} does not match manifest {hash}"
                )));
            }
        }
        Ok(())
    }
}

/// Writes files into a run directory and remembers their hashes.
pub(crate) struct RunWriter {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl RunWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|source| Error::File {
            path: dir.to_owned(),
            source,
        })?;
        // A stale manifest must not vouch for a run that is about to change.
        let old = dir.join(MANIFEST_FILE);
        if old.exists() {
            fs::remove_file(&old)?;
        }
        Ok(Self {
            dir: dir.to_owned(),
            manifest: Manifest {
                format: MANIFEST_FORMAT.into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                status: RunStatus::Incomplete,
                error: None,
                seeds: Vec::new(),
                data_hash: None,
                alphabet_hash: None,
                files: BTreeMap::new(),
            },
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).map_err(|source| Error::File { path, source })?;
        self.manifest.files.insert(name.into(), sha256_hex(bytes));
        Ok(())
    }

    /// Records a file some other routine already wrote.
    pub fn register(&mut self, name: &str) -> Result<()> {
        let bytes = read_file(&self.dir.join(name))?;
        self.manifest.files.insert(name.into(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn finish(&mut self, outcome: &Result<()>) -> Result<()> {
        match outcome {
            Ok(()) => {
                self.manifest.status = RunStatus::Complete;
                self.manifest.error = None;
            }
            Err(e) => {
                self.manifest.status = RunStatus::Incomplete;
                self.manifest.error = Some(e.to_string());
            }
        }
        let mut json = serde_json::to_string_pretty(&self.manifest)?;
        json.push('\n');
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, json).map_err(|source| Error::File { path, source })
    }
}
