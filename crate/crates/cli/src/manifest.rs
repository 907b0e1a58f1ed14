use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Provenance record written next to every command's outputs: the config
/// digest, the command line, wall-clock bounds, and a content digest of each
/// produced artifact.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub artifacts: Vec<ArtifactDigest>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ArtifactDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let data =
        std::fs::read(path).with_context(|| format!("cannot digest {}", path.display()))?;
    let mut h = Sha256::new();
    h.update(&data);
    Ok((hex(&h.finalize()), data.len() as u64))
}

#[allow(dead_code)]
pub fn sha256_bytes(data: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(data);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub struct ManifestBuilder {
    command: String,
    config_sha256: String,
    started: u128,
}

impl ManifestBuilder {
    pub fn start(command: &str, config_path: &Path) -> Result<Self> {
        let (config_sha256, _) = sha256_file(config_path)?;
        Ok(ManifestBuilder {
            command: command.to_string(),
            config_sha256,
            started: now_ms(),
        })
    }

    /// Digests every artifact (files, or directories walked recursively) and
    /// writes the manifest under `<workdir>/manifests/<command>.json`.
    pub fn finish(self, workdir: &Path, artifacts: &[PathBuf]) -> Result<PathBuf> {
        let mut digests = Vec::new();
        for a in artifacts {
            collect_digests(a, workdir, &mut digests)?;
        }
        digests.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            command: self.command.clone(),
            config_sha256: self.config_sha256,
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
            artifacts: digests,
        };
        let dir = workdir.join("manifests");
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{}.json", self.command.replace(' ', "_")));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}

fn collect_digests(path: &Path, root: &Path, out: &mut Vec<ArtifactDigest>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            collect_digests(&e, root, out)?;
        }
        return Ok(());
    }
    let (sha256, bytes) = sha256_file(path)?;
    let rel = path.strip_prefix(root).unwrap_or(path);
    out.push(ArtifactDigest {
        path: rel.display().to_string(),
        sha256,
        bytes,
    });
    Ok(())
}
