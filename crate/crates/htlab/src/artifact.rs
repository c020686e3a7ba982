//! Artifact provenance: every pipeline output carries a sidecar recording
//! what produced it.
//!
//! A sidecar `<file>.meta.json` embeds the tool version, the configuration
//! hash, the stage seed, the artifact's own content hash, and the content
//! hashes of every input the stage consumed. Consumers recompute hashes on
//! load, so an edited or stale file surfaces as a hash mismatch instead of a
//! silently wrong result, and a stage whose recorded provenance matches the
//! current request can reuse its output without redoing the work.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Version string embedded in every sidecar.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("missing prerequisite `{path}`; produce it with `{produced_by}`")]
    Missing { path: PathBuf, produced_by: String },
    #[error("missing sidecar for `{path}`")]
    MetaMissing { path: PathBuf },
    #[error("hash mismatch for `{path}`: sidecar records {expected}, file hashes to {actual}")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("artifact io at `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("sidecar parse at `{path}`: {detail}")]
    Json { path: PathBuf, detail: String },
}

/// Provenance record written next to each artifact.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub tool_version: String,
    pub config_sha256: String,
    pub seed: u64,
    /// SHA-256 of the artifact file itself.
    pub content_sha256: String,
    /// Input name to content hash, for every prerequisite consumed.
    pub inputs: BTreeMap<String, String>,
    /// Free-form stage annotations, such as durations and counts.
    pub notes: BTreeMap<String, String>,
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Sidecar path for an artifact: `<path>.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn io_err(path: &Path, source: std::io::Error) -> ArtifactError {
    ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write an artifact and its sidecar; the content hash is filled in here.
pub fn write_artifact(
    path: &Path,
    bytes: &[u8],
    config_sha256: &str,
    seed: u64,
    inputs: BTreeMap<String, String>,
    notes: BTreeMap<String, String>,
) -> Result<ArtifactMeta, ArtifactError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))?;
    let meta = ArtifactMeta {
        tool_version: TOOL_VERSION.to_string(),
        config_sha256: config_sha256.to_string(),
        seed,
        content_sha256: sha256_hex(bytes),
        inputs,
        notes,
    };
    let sidecar = meta_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("meta is serializable");
    std::fs::write(&sidecar, text).map_err(|e| io_err(&sidecar, e))?;
    Ok(meta)
}

/// Read an artifact's sidecar; absent sidecar is its own error so callers
/// can distinguish "never produced" from "produced without provenance".
pub fn read_meta(path: &Path) -> Result<ArtifactMeta, ArtifactError> {
    let sidecar = meta_path(path);
    let text = match std::fs::read_to_string(&sidecar) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(ArtifactError::MetaMissing {
                path: path.to_path_buf(),
            })
        }
        Err(e) => return Err(io_err(&sidecar, e)),
    };
    serde_json::from_str(&text).map_err(|e| ArtifactError::Json {
        path: sidecar,
        detail: e.to_string(),
    })
}

/// Load an artifact produced by `produced_by`, verifying its content against
/// the sidecar hash.
pub fn load_verified(path: &Path, produced_by: &str) -> Result<(Vec<u8>, ArtifactMeta), ArtifactError> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(ArtifactError::Missing {
                path: path.to_path_buf(),
                produced_by: produced_by.to_string(),
            })
        }
        Err(e) => return Err(io_err(path, e)),
    };
    let meta = read_meta(path)?;
    let actual = sha256_hex(&bytes);
    if actual != meta.content_sha256 {
        return Err(ArtifactError::HashMismatch {
            path: path.to_path_buf(),
            expected: meta.content_sha256,
            actual,
        });
    }
    Ok((bytes, meta))
}

/// True when the artifact exists with intact content and provenance matching
/// the requested configuration hash, seed, and input hashes; such a stage
/// output can be reused as-is.
pub fn cache_fresh(
    path: &Path,
    config_sha256: &str,
    seed: u64,
    inputs: &BTreeMap<String, String>,
) -> bool {
    let Ok(bytes) = std::fs::read(path) else {
        return false;
    };
    let Ok(meta) = read_meta(path) else {
        return false;
    };
    meta.content_sha256 == sha256_hex(&bytes)
        && meta.config_sha256 == config_sha256
        && meta.seed == seed
        && &meta.inputs == inputs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn roundtrip_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("thing.txt");
        let meta = write_artifact(
            &path,
            b"payload",
            "cfg",
            42,
            BTreeMap::from([("design".to_string(), "abc".to_string())]),
            BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(meta.tool_version, TOOL_VERSION);
        let (bytes, loaded) = load_verified(&path, "stage").unwrap();
        assert_eq!(bytes, b"payload");
        assert_eq!(loaded.seed, 42);
        assert_eq!(loaded.config_sha256, "cfg");
        assert_eq!(loaded.inputs["design"], "abc");
    }

    #[test]
    fn missing_artifact_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_verified(&dir.path().join("absent"), "rare-nets").unwrap_err();
        match err {
            ArtifactError::Missing { produced_by, .. } => assert_eq!(produced_by, "rare-nets"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn tampered_artifact_is_hash_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("thing.txt");
        write_artifact(&path, b"payload", "cfg", 0, BTreeMap::new(), BTreeMap::new()).unwrap();
        std::fs::write(&path, b"edited").unwrap();
        let err = load_verified(&path, "stage").unwrap_err();
        assert!(matches!(err, ArtifactError::HashMismatch { .. }), "{err}");
    }

    #[test]
    fn artifact_without_sidecar_is_meta_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("thing.txt");
        std::fs::write(&path, b"payload").unwrap();
        let err = load_verified(&path, "stage").unwrap_err();
        assert!(matches!(err, ArtifactError::MetaMissing { .. }), "{err}");
    }

    #[test]
    fn cache_freshness_tracks_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("thing.txt");
        let inputs = BTreeMap::from([("in".to_string(), "h1".to_string())]);
        write_artifact(&path, b"payload", "cfg", 7, inputs.clone(), BTreeMap::new()).unwrap();
        assert!(cache_fresh(&path, "cfg", 7, &inputs));
        assert!(!cache_fresh(&path, "other", 7, &inputs));
        assert!(!cache_fresh(&path, "cfg", 8, &inputs));
        let changed = BTreeMap::from([("in".to_string(), "h2".to_string())]);
        assert!(!cache_fresh(&path, "cfg", 7, &changed));
        std::fs::write(&path, b"edited").unwrap();
        assert!(!cache_fresh(&path, "cfg", 7, &inputs));
    }
}
