//! Run manifests: what was run, on which inputs, and which artifacts came
//! out, each with a content hash so reports can verify integrity.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HashedFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Human-readable run label, used by reports.
    pub run_name: String,
    pub created_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub seed: u64,
    /// The model spec document this run used, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<serde_json::Value>,
    pub dataset: HashedFile,
    pub artifacts: Vec<HashedFile>,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("clock after epoch")
        .as_millis()
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let bytes = fs::read(&path)?;
    Ok(sha256_bytes(&bytes))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

pub fn hashed(path: impl AsRef<Path>) -> Result<HashedFile> {
    Ok(HashedFile {
        path: path.as_ref().display().to_string(),
        sha256: sha256_file(&path)?,
    })
}

impl RunManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("corrupt manifest {}: {e}", path.display())))
    }

    /// Re-hashes the dataset and every artifact; errors on any mismatch or
    /// missing file.
    pub fn verify(&self, base_dir: &Path) -> Result<()> {
        let check = |entry: &HashedFile| -> Result<()> {
            let p = resolve(base_dir, &entry.path);
            let actual = sha256_file(&p)
                .map_err(|_| CliError::validation(format!("missing artifact {}", entry.path)))?;
            if actual != entry.sha256 {
                return Err(CliError::validation(format!(
                    "hash mismatch for {}: manifest {} vs file {}",
                    entry.path, entry.sha256, actual
                )));
            }
            Ok(())
        };
        check(&self.dataset)?;
        for artifact in &self.artifacts {
            check(artifact)?;
        }
        Ok(())
    }
}

/// Manifest entries may be absolute or relative to the manifest's directory.
pub fn resolve(base_dir: &Path, entry: &str) -> PathBuf {
    let p = Path::new(entry);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}
