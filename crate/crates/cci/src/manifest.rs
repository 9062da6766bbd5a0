//! Run manifests: what a stage read, wrote and was configured with. No
//! timestamps, so equal runs give equal manifests.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{IoError, REPORT_SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// File name only, so manifests compare across directories.
    pub name: String,
    /// Absent for outputs holding wall-clock measurements.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, IoError> {
        let bytes = std::fs::read(path).map_err(|source| IoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(FileDigest {
            name: path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned()),
            sha256: Some(hex::encode(Sha256::digest(bytes))),
        })
    }

    pub fn name_only(path: &Path) -> Self {
        FileDigest {
            name: path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned()),
            sha256: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    /// `volatile` outputs are listed by name only.
    pub fn build(command: &str, seed: u64, config_hash: &str, inputs: &[&Path], outputs: &[&Path], volatile: &[&Path]) -> Result<Self, IoError> {
        let digest = |ps: &[&Path]| ps.iter().map(|p| FileDigest::of(p)).collect::<Result<Vec<_>, _>>();
        let mut out = digest(outputs)?;
        out.extend(volatile.iter().map(|p| FileDigest::name_only(p)));
        Ok(RunManifest {
            schema_version: REPORT_SCHEMA_VERSION,
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: config_hash.to_string(),
            inputs: digest(inputs)?,
            outputs: out,
        })
    }

    /// `<primary output>.manifest.json`.
    pub fn default_path(primary_output: &Path) -> std::path::PathBuf {
        let mut name = primary_output.as_os_str().to_owned();
        name.push(".manifest.json");
        name.into()
    }
}
