use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Command, SceneConfig};
use crate::{CliError, Context};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputEntry {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

/// Written as `manifest_<command>.json`. Contains nothing time- or host-dependent, so
/// identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub outputs: Vec<OutputEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> Result<String, CliError> {
    std::fs::read(path)
        .map(|b| sha256_hex(&b))
        .map_err(|e| splatdyn_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
        .context(|| "hashing outputs".into())
}

pub fn write_manifest(command: Command, config: &SceneConfig, outputs: &[PathBuf]) -> Result<Manifest, CliError> {
    let mut normalized = config.clone();
    // the hash describes the scene, not where it was written
    normalized.output = PathBuf::new();
    let config_json = serde_json::to_value(&normalized).map_err(|e| CliError::Runtime {
        context: "serializing config".into(),
        source: e.into(),
    })?;
    let mut entries = Vec::with_capacity(outputs.len());
    for p in outputs {
        let rel = p.strip_prefix(&config.output).unwrap_or(p);
        entries.push(OutputEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: hash_file(p)?,
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        command: format!("{command:?}").to_lowercase(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config_sha256: sha256_hex(config_json.to_string().as_bytes()),
        config: config_json,
        outputs: entries,
    };
    let path = config.output.join(format!("manifest_{}.json", manifest.command));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::create_dir_all(&config.output)
        .and_then(|_| std::fs::write(&path, text + "\n"))
        .map_err(|e| splatdyn_core::Error::Io { path: path.clone(), source: e })
        .context(|| "writing manifest".into())?;
    Ok(manifest)
}
