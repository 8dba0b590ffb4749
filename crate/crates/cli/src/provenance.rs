//! Stage provenance and caching.
//!
//! Every stage directory carries a `provenance.json` with the fingerprint of
//! (stage name, parameters, input content hash) plus the artifact list and a
//! content hash over the artifact bytes. A stage is skipped when its
//! fingerprint matches, no `.incomplete` marker is present, and every
//! artifact still exists; anything else forces a rebuild. Failures leave the
//! marker behind so partial outputs are never mistaken for results.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    /// sha256 over (stage, params, input hash); the cache key.
    pub fingerprint: String,
    /// sha256 over the artifact bytes; downstream stages chain on this.
    pub content_hash: String,
    pub artifacts: Vec<String>,
    pub root_seed: u64,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub provenance: Provenance,
    pub cached: bool,
}

pub fn sha_hex(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p);
    }
    format!("{:x}", hasher.finalize())
}

pub fn file_sha(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot hash {}", path.display()))?;
    Ok(sha_hex(&[&bytes]))
}

/// Content hash over a deterministic list of files under `dir`.
pub fn artifacts_hash(dir: &Path, artifacts: &[String]) -> Result<String> {
    let mut hasher = Sha256::new();
    for rel in artifacts {
        hasher.update(rel.as_bytes());
        let bytes = std::fs::read(dir.join(rel))
            .with_context(|| format!("missing artifact {rel} under {}", dir.display()))?;
        hasher.update(bytes);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn fingerprint(stage: &str, params_json: &str, input_hash: &str) -> String {
    sha_hex(&[stage.as_bytes(), b"|", params_json.as_bytes(), b"|", input_hash.as_bytes()])
}

fn provenance_path(dir: &Path) -> PathBuf {
    dir.join("provenance.json")
}

fn marker_path(dir: &Path) -> PathBuf {
    dir.join(".incomplete")
}

fn load_provenance(dir: &Path) -> Option<Provenance> {
    let raw = std::fs::read_to_string(provenance_path(dir)).ok()?;
    serde_json::from_str(&raw).ok()
}

/// Run or skip one stage. `build` produces the artifact list (paths relative
/// to `dir`); it only runs on a cache miss.
pub fn run_stage(
    dir: &Path,
    stage: &str,
    params_json: &str,
    input_hash: &str,
    root_seed: u64,
    build: impl FnOnce() -> Result<Vec<String>>,
) -> Result<StageOutcome> {
    let fp = fingerprint(stage, params_json, input_hash);
    if !marker_path(dir).exists() {
        if let Some(prov) = load_provenance(dir) {
            let artifacts_present = prov
                .artifacts
                .iter()
                .all(|rel| dir.join(rel).exists());
            if prov.fingerprint == fp && artifacts_present {
                return Ok(StageOutcome {
                    provenance: prov,
                    cached: true,
                });
            }
        }
    }

    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create stage dir {}", dir.display()))?;
    std::fs::write(marker_path(dir), b"")
        .with_context(|| format!("cannot mark stage {} in progress", stage))?;

    let artifacts = build().with_context(|| format!("stage {stage} failed"))?;
    let content_hash = artifacts_hash(dir, &artifacts)?;
    let provenance = Provenance {
        stage: stage.to_string(),
        fingerprint: fp,
        content_hash,
        artifacts,
        root_seed,
    };
    std::fs::write(
        provenance_path(dir),
        serde_json::to_string_pretty(&provenance)?,
    )?;
    std::fs::remove_file(marker_path(dir))?;
    Ok(StageOutcome {
        provenance,
        cached: false,
    })
}
