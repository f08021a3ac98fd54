//! Run manifests: the command, its fully resolved options and the digests
//! of every file it read or wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use misivqr::montecarlo::sha256_hex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::Flags;
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    /// Resolved options without output paths.
    pub config: Value,
    pub seed: Option<u64>,
    pub version: String,
    /// Digest of `{command, config, version}`; embedded in JSON outputs.
    pub manifest_hash: String,
    pub inputs: Vec<FileDigest>,
    /// Keyed by the option that named the file (`out`, `csv`, `summary`).
    pub outputs: BTreeMap<String, FileDigest>,
}

pub fn version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

pub fn run_hash(command: &str, config: &Value) -> String {
    let key = serde_json::json!({
        "command": command,
        "config": config,
        "version": version(),
    });
    sha256_hex(key.to_string().as_bytes())
}

pub fn digest_file(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    })
}

impl RunManifest {
    pub fn new(command: &str, flags: &Flags) -> Self {
        let config = flags.run_spec();
        Self {
            command: command.to_string(),
            manifest_hash: run_hash(command, &config),
            config,
            seed: flags.seed,
            version: version(),
            inputs: Vec::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid manifest {}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    /// Options to rerun the recorded command, writing to the recorded paths
    /// unless `overrides` names new ones.
    pub fn replay_flags(&self, overrides: &Flags) -> Result<Flags, CliError> {
        let mut flags: Flags = serde_json::from_value(self.config.clone())
            .map_err(|e| CliError::Usage(format!("manifest config: {e}")))?;
        let recorded = |key: &str| self.outputs.get(key).map(|d| d.path.clone());
        flags.out = overrides.out.clone().or_else(|| recorded("out"));
        flags.csv = overrides.csv.clone().or_else(|| recorded("csv"));
        flags.summary = overrides.summary.clone().or_else(|| recorded("summary"));
        flags.manifest = overrides.manifest.clone();
        flags.threads = overrides.threads;
        Ok(flags)
    }
}

/// Default manifest location next to the primary output.
pub fn manifest_path(flags: &Flags) -> Option<PathBuf> {
    flags.manifest.clone().or_else(|| {
        flags.out.as_ref().map(|out| {
            let mut name = out.as_os_str().to_os_string();
            name.push(".manifest.json");
            PathBuf::from(name)
        })
    })
}
