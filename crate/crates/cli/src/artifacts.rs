//! Stage output directories with content-hash manifests.
//!
//! Every stage writes its files into its own directory together with a
//! `manifest.json` recording a key (hash of the stage's parameters and of
//! its upstream manifests) and the SHA-256 of every output file. A stage
//! whose key is unchanged and whose files still match is up to date.
//! Wall-clock metadata goes to `run.json`, which no hash covers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const RUN_INFO: &str = "run.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub key: String,
    /// Upstream stage name to the digest of its manifest.
    pub upstream: BTreeMap<String, String>,
    /// Output file name to its SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl StageManifest {
    pub fn digest(&self) -> String {
        sha256_hex(&to_json_bytes(self))
    }
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("artifact serializes");
    v.push(b'\n');
    v
}

pub fn read_manifest(dir: &Path) -> Option<StageManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST)).ok()?;
    serde_json::from_str(&text).ok()
}

/// True when `dir` holds a manifest with this key and every listed output
/// still has its recorded hash.
pub fn is_up_to_date(dir: &Path, key: &str) -> bool {
    let Some(m) = read_manifest(dir) else {
        return false;
    };
    m.key == key
        && m.outputs
            .iter()
            .all(|(name, hash)| sha256_file(&dir.join(name)).map(|h| &h == hash).unwrap_or(false))
}

/// Collects the files of one stage run before committing its manifest.
pub struct StageWriter {
    dir: PathBuf,
    stage: String,
    key: String,
    upstream: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl StageWriter {
    pub fn create(dir: &Path, stage: &str, key: &str, upstream: BTreeMap<String, String>) -> Result<Self, CliError> {
        if dir.exists() {
            std::fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), stage: stage.into(), key: key.into(), upstream, outputs: BTreeMap::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.outputs.insert(name.into(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.write(name, &to_json_bytes(value))
    }

    /// Registers a file that was written directly into the stage directory.
    pub fn register(&mut self, name: &str) -> Result<(), CliError> {
        let h = sha256_file(&self.dir.join(name))?;
        self.outputs.insert(name.into(), h);
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        for r in rows {
            w.write_record(r).map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        self.write(name, &bytes)
    }

    pub fn finish(self) -> Result<StageManifest, CliError> {
        let manifest = StageManifest { stage: self.stage, key: self.key, upstream: self.upstream, outputs: self.outputs };
        let path = self.dir.join(MANIFEST);
        std::fs::write(&path, to_json_bytes(&manifest)).map_err(|e| CliError::io(&path, e))?;
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let info = serde_json::json!({ "finished_unix_seconds": secs, "version": env!("CARGO_PKG_VERSION") });
        let path = self.dir.join(RUN_INFO);
        std::fs::write(&path, to_json_bytes(&info)).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn up_to_date_detection() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("stage");
        let mut w = StageWriter::create(&dir, "s", "k1", BTreeMap::new()).unwrap();
        w.write("a.txt", b"hello").unwrap();
        w.finish().unwrap();
        assert!(is_up_to_date(&dir, "k1"));
        assert!(!is_up_to_date(&dir, "k2"));
        std::fs::write(dir.join("a.txt"), b"tampered").unwrap();
        assert!(!is_up_to_date(&dir, "k1"));
    }
}
