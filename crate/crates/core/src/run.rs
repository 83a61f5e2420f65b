//! Run manifests: the effective configuration, input hash and artifact
//! hashes of one output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{data_err, NclError, Result};

pub const RUN_MANIFEST_FILE: &str = "run.json";
pub const RUN_MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Content hash of the input directory, if the command reads one.
    pub input_hash: Option<String>,
    /// Hash of command, seed, config and input hash. Runs sharing it produce
    /// byte-identical artifacts.
    pub run_hash: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| NclError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| NclError::io(dir, e))? {
        let path = entry.map_err(|e| NclError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != RUN_MANIFEST_FILE) {
            out.push(path.strip_prefix(root).expect("walk stays under root").to_path_buf());
        }
    }
    Ok(())
}

/// Hash over every file below `dir` except run manifests, in sorted path
/// order, each entry framed as `path NUL length NUL content`.
pub fn hash_dir(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let bytes = fs::read(dir.join(&rel)).map_err(|e| NclError::io(dir.join(&rel), e))?;
        let name = rel.to_string_lossy().replace('\\', "/");
        h.update(name.as_bytes());
        h.update([0]);
        h.update(bytes.len().to_string().as_bytes());
        h.update([0]);
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: &impl Serialize, input_hash: Option<String>) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let key = serde_json::to_string(&(command, seed, &config, &input_hash))?;
        Ok(Self {
            format_version: RUN_MANIFEST_VERSION,
            command: command.to_string(),
            seed,
            config,
            input_hash,
            run_hash: sha256_hex(key.as_bytes()),
            started_unix: now_unix(),
            finished_unix: None,
            artifacts: Vec::new(),
        })
    }

    /// Records (or re-records) the file at `dir/rel`.
    pub fn add_artifact(&mut self, dir: &Path, rel: &str) -> Result<()> {
        let path = dir.join(rel);
        let bytes = fs::read(&path).map_err(|e| NclError::io(&path, e))?;
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn artifact(&self, rel: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == rel)
    }

    /// Stamps the finish time and writes `dir/run.json`, replacing any
    /// previous manifest.
    pub fn finish(&mut self, dir: &Path) -> Result<()> {
        self.finished_unix = Some(now_unix());
        let text = serde_json::to_string_pretty(self)?;
        let path = dir.join(RUN_MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| NclError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| NclError::io(&path, e))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        if m.format_version != RUN_MANIFEST_VERSION {
            return Err(data_err(format!(
                "run manifest version {} is not supported",
                m.format_version
            )));
        }
        Ok(m)
    }

    /// Re-hashes every recorded artifact and reports the first mismatch.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let h = hash_file(&dir.join(&a.path))?;
            if h != a.sha256 {
                return Err(data_err(format!("artifact {} changed since the run finished", a.path)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_hash() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn run_hash_ignores_time() {
        let a = RunManifest::new("pretrain", 3, &vec![1, 2], None).unwrap();
        let b = RunManifest::new("pretrain", 3, &vec![1, 2], None).unwrap();
        let c = RunManifest::new("pretrain", 4, &vec![1, 2], None).unwrap();
        assert_eq!(a.run_hash, b.run_hash);
        assert_ne!(a.run_hash, c.run_hash);
    }
}
